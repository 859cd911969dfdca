//! `train`, `tune` and `sweep`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use serde::Deserialize;

use phaseforge::dataio::{Dataset, PhaseLabelSet};
use phaseforge::decode::{ensemble_probs, threshold};
use phaseforge::elemgraph::{ElementProperties, GraphBuilder, DEFAULT_PROPS};
use phaseforge::eval::subset_accuracy;
use phaseforge::fsutil::write_atomic;
use phaseforge::gatcore::save_checkpoint;
use phaseforge::losses::Penalty;
use phaseforge::train::{
    default_lambda_grid, lambda_sweep, macro_f1_at, random_search, sweep_table, train_seeds, tune_thresholds,
    ClassWeights, SearchSpace, TrainConfig, TrainData, TrainError, TrainOutcome,
};

use crate::common::{load_data, load_models};
use crate::manifest::{now_unix, sha256_file, sha256_hex, RunManifest};
use crate::rundir::{run_toml, seed_dir, DataSection, PROPS_FILE, THRESHOLDS_FILE};
use crate::{fail, CliError, CliResult, WithCode, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_FAILURE};

/// Inputs and config overrides shared by the training commands.
#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Split dataset.
    #[arg(long)]
    pub data: PathBuf,
    /// TOML config with `[train]`, `[train.loss]` and `[search]` tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model file supplying phase admissibility for custom vocabularies.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Element descriptor table; defaults to the shipped one.
    #[arg(long)]
    pub props: Option<PathBuf>,
    /// Physics penalty: none, gpr, smooth or pure.
    #[arg(long)]
    pub physics: Option<String>,
    /// Penalty weight.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Number of seeds.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// First seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Run every epoch regardless of validation progress.
    #[arg(long)]
    pub fixed_epochs: bool,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Class weights: auto or ones.
    #[arg(long)]
    pub class_weights: Option<String>,
    /// Leave self-loops out of the element graph.
    #[arg(long)]
    pub no_self_loops: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of sampled configurations.
    #[arg(long, default_value_t = 20)]
    pub budget: usize,
    /// Seed of the configuration sampler.
    #[arg(long, default_value_t = 0)]
    pub search_seed: u64,
    /// Epoch cap per trial.
    #[arg(long, default_value_t = 30)]
    pub trial_epochs: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated weights; defaults to 0.05..0.45 in steps of 0.05.
    #[arg(long)]
    pub lambdas: Option<String>,
    /// Fixed epochs per weight.
    #[arg(long, default_value_t = 20)]
    pub sweep_epochs: usize,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SearchFile {
    hidden_dim: Option<Vec<usize>>,
    batch_size: Option<Vec<usize>>,
    lr: Option<(f64, f64)>,
    weight_decay: Option<(f64, f64)>,
    dropout: Option<(f64, f64)>,
}

/// Parsed config file: the training config and the search space.
pub fn load_config(path: Option<&Path>) -> CliResult<(TrainConfig, SearchSpace, Option<String>)> {
    let Some(path) = path else {
        return Ok((TrainConfig::default(), SearchSpace::default(), None));
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .code(EXIT_CONFIG)?;
    let mut table: toml::Table = text
        .parse()
        .with_context(|| format!("parsing config {}", path.display()))
        .code(EXIT_CONFIG)?;
    let cfg = match table.remove("train") {
        Some(v) => TrainConfig::from_toml_value(v).code(EXIT_CONFIG)?,
        None => TrainConfig::default(),
    };
    let search: SearchFile = match table.remove("search") {
        Some(v) => v.try_into().context("bad [search] table").code(EXIT_CONFIG)?,
        None => SearchFile::default(),
    };
    // a run.toml can serve as a config; its [data] table is descriptive only
    table.remove("data");
    if let Some(k) = table.keys().next() {
        return fail(EXIT_CONFIG, format!("unknown config table {k:?}"));
    }
    let d = SearchSpace::default();
    let space = SearchSpace {
        hidden_dim: search.hidden_dim.unwrap_or(d.hidden_dim),
        batch_size: search.batch_size.unwrap_or(d.batch_size),
        lr: search.lr.unwrap_or(d.lr),
        weight_decay: search.weight_decay.unwrap_or(d.weight_decay),
        dropout: search.dropout.unwrap_or(d.dropout),
    };
    Ok((cfg, space, Some(sha256_hex(text.as_bytes()))))
}

impl FitArgs {
    pub fn apply(&self, mut cfg: TrainConfig) -> CliResult<TrainConfig> {
        if let Some(p) = &self.physics {
            cfg.loss.penalty = Penalty::parse(p).code(EXIT_CONFIG)?;
        }
        if let Some(l) = self.lambda {
            cfg.loss.lambda = l;
        }
        if self.seeds.is_some() || self.seed.is_some() {
            let n = self.seeds.unwrap_or(cfg.seeds.len());
            let start = self.seed.unwrap_or(cfg.seeds.first().copied().unwrap_or(0));
            cfg.seeds = (start..start + n as u64).collect();
        }
        if let Some(e) = self.epochs {
            cfg.max_epochs = e;
        }
        if self.fixed_epochs {
            cfg.fixed_epochs = true;
        }
        if let Some(p) = self.patience {
            cfg.patience = p;
        }
        if let Some(h) = self.hidden {
            cfg.hidden_dim = h;
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b;
        }
        if let Some(lr) = self.lr {
            cfg.lr = lr;
        }
        if let Some(w) = &self.class_weights {
            cfg.class_weights = match w.as_str() {
                "auto" => ClassWeights::Auto,
                "ones" => ClassWeights::Ones,
                other => return fail(EXIT_CONFIG, format!("--class-weights takes auto or ones, not {other:?}")),
            };
        }
        if self.no_self_loops {
            cfg.self_loops = false;
        }
        cfg.validate().code(EXIT_CONFIG)?;
        Ok(cfg)
    }
}

pub fn train_code(e: &TrainError) -> i32 {
    match e {
        TrainError::Divergence { .. } => EXIT_DIVERGENCE,
        TrainError::Config(_) | TrainError::Loss(_) => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}

pub fn train_err(e: TrainError) -> CliError {
    CliError {
        code: train_code(&e),
        error: e.into(),
    }
}

/// Everything a training command needs once the inputs are loaded.
pub struct Prepared {
    pub cfg: TrainConfig,
    pub space: SearchSpace,
    pub ds: Dataset,
    pub data: TrainData,
    pub props_text: String,
    pub config_sha256: Option<String>,
    pub dataset_sha256: String,
}

pub fn prepare(a: &FitArgs) -> CliResult<Prepared> {
    let (cfg, space, config_sha256) = load_config(a.config.as_deref())?;
    let cfg = a.apply(cfg)?;
    let models = load_models(a.model.as_deref())?;
    let ds = load_data(&a.data, &models)?;
    let props_text = match &a.props {
        Some(p) => std::fs::read_to_string(p)
            .with_context(|| format!("reading {}", p.display()))
            .code(EXIT_CONFIG)?,
        None => DEFAULT_PROPS.to_string(),
    };
    let props = ElementProperties::parse(&props_text, &ds.elements).code(EXIT_CONFIG)?;
    let builder = GraphBuilder::new(&props, ds.t_range(), cfg.self_loops).code(EXIT_CONFIG)?;
    let data = TrainData::new(&ds, &builder, &cfg.loss).map_err(train_err)?;
    Ok(Prepared {
        cfg,
        space,
        data,
        props_text,
        config_sha256,
        dataset_sha256: sha256_file(&a.data)?,
        ds,
    })
}

fn write(path: &Path, text: &str, files: &mut Vec<PathBuf>) -> CliResult<()> {
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))?;
    files.push(path.to_path_buf());
    Ok(())
}

fn ensemble(p: &Prepared, outs: &[TrainOutcome], idx: &[usize]) -> CliResult<Vec<f64>> {
    let sets = outs
        .iter()
        .map(|o| p.data.predict(&o.params, idx))
        .collect::<Result<Vec<_>, _>>()
        .context("ensemble prediction")?;
    Ok(ensemble_probs(&sets).context("ensemble prediction")?)
}

pub fn train(a: &TrainArgs, jobs: usize) -> CliResult<()> {
    let started = now_unix();
    let p = prepare(&a.fit)?;
    let cfg = &p.cfg;
    eprintln!(
        "training {} seed(s) on {} samples ({} train, {} val), penalty {} lambda {}",
        cfg.seeds.len(),
        p.ds.samples.len(),
        p.data.train.len(),
        p.data.val.len(),
        cfg.loss.penalty.as_str(),
        cfg.loss.lambda
    );
    let outs = train_seeds(&p.data, cfg, jobs)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(train_err)?;
    let dir = &a.out;
    let phases = p.ds.vocab.names();
    let mut files = Vec::new();
    let data_section = DataSection::describe(&p.ds, &a.fit.data, p.dataset_sha256.clone());
    write(&dir.join("run.toml"), &run_toml(cfg, &data_section)?, &mut files)?;
    write(&dir.join(PROPS_FILE), &p.props_text, &mut files)?;
    let mut runs = String::from("seed,epochs_run,best_epoch,best_val_macro_f1,final_val_macro_f1,stopped_early\n");
    for o in &outs {
        let r = &o.record;
        let sd = seed_dir(dir, r.seed);
        let ck = sd.join("checkpoint.bin");
        save_checkpoint(&o.params, &ck).with_context(|| format!("writing {}", ck.display()))?;
        files.push(ck);
        write(&sd.join("history.csv"), &r.history_csv(), &mut files)?;
        write(&sd.join(THRESHOLDS_FILE), &r.thresholds.to_text(phases), &mut files)?;
        let _ = writeln!(
            runs,
            "{},{},{},{:.6},{:.6},{}",
            r.seed,
            r.history.len(),
            r.best_epoch,
            r.best_val_macro_f1,
            r.final_val_macro_f1,
            r.stopped_early
        );
        eprintln!(
            "seed {}: best epoch {} val macro-F1 {:.4} ({} epochs)",
            r.seed,
            r.best_epoch,
            r.best_val_macro_f1,
            r.history.len()
        );
    }
    write(&dir.join("runs.csv"), &runs, &mut files)?;

    let k = p.data.k;
    let labels_of = |idx: &[usize]| -> Vec<PhaseLabelSet> { idx.iter().map(|&i| p.data.labels[i]).collect() };
    let val_truth = labels_of(&p.data.val);
    let pv = ensemble(&p, &outs, &p.data.val)?;
    let tv = tune_thresholds(&pv, &val_truth, k);
    write(&dir.join(THRESHOLDS_FILE), &tv.to_text(phases), &mut files)?;
    let mut summary = format!(
        "seeds {}\nval_macro_f1 {:.6}\n",
        outs.len(),
        macro_f1_at(&pv, &val_truth, &tv.t)
    );
    if !p.data.test.is_empty() {
        let test_truth = labels_of(&p.data.test);
        let pt = ensemble(&p, &outs, &p.data.test)?;
        let pred = threshold(&pt, &tv.t).context("thresholding")?;
        let (acc, n_mis) = subset_accuracy(&pred, &test_truth).context("scoring")?;
        let _ = write!(
            summary,
            "test_macro_f1 {:.6}\ntest_accuracy {:.6}\ntest_mismatches {n_mis}/{}\n",
            macro_f1_at(&pt, &test_truth, &tv.t),
            acc,
            test_truth.len()
        );
    }
    write(&dir.join("summary.txt"), &summary, &mut files)?;
    eprint!("{summary}");

    let mut m = RunManifest::new("train", started);
    m.config_sha256 = Some(sha256_hex(cfg.to_canonical_string().as_bytes()));
    m.dataset_sha256 = Some(p.dataset_sha256.clone());
    m.seeds = cfg.seeds.clone();
    m.finish(&dir.join("manifest.json"), &files)?;
    Ok(())
}

pub fn tune(a: &TuneArgs, jobs: usize) -> CliResult<()> {
    let started = now_unix();
    let p = prepare(&a.fit)?;
    eprintln!("random search: {} trials of up to {} epochs", a.budget, a.trial_epochs);
    let r = random_search(&p.data, &p.cfg, &p.space, a.budget, a.search_seed, a.trial_epochs, jobs).map_err(train_err)?;
    let best = TrainConfig {
        seeds: p.cfg.seeds.clone(),
        max_epochs: p.cfg.max_epochs,
        ..r.best_config().clone()
    };
    let mut files = Vec::new();
    let table = r.to_table();
    write(&a.out.join("search.tsv"), &table, &mut files)?;
    write(&a.out.join("best.toml"), &best.to_canonical_string(), &mut files)?;
    print!("{table}");
    eprintln!("best trial {} val macro-F1 {:.4}", r.best, r.trials[r.best].val_macro_f1);
    let mut m = RunManifest::new("tune", started);
    m.config_sha256 = p.config_sha256.clone();
    m.dataset_sha256 = Some(p.dataset_sha256.clone());
    m.seeds = vec![a.search_seed, p.cfg.seeds[0]];
    m.finish(&a.out.join("manifest.json"), &files)?;
    Ok(())
}

pub fn parse_lambdas(spec: Option<&str>) -> CliResult<Vec<f64>> {
    let Some(s) = spec else {
        return Ok(default_lambda_grid());
    };
    let v = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| anyhow::anyhow!("bad --lambdas list {s:?}"))
        .code(EXIT_CONFIG)?;
    if v.is_empty() || v.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
        return fail(EXIT_CONFIG, "--lambdas must be non-negative numbers");
    }
    Ok(v)
}

pub fn sweep(a: &SweepArgs, jobs: usize) -> CliResult<()> {
    let started = now_unix();
    let p = prepare(&a.fit)?;
    let q = p.cfg.loss.penalty;
    if q == Penalty::None {
        return fail(EXIT_CONFIG, "sweep needs --physics gpr, smooth or pure");
    }
    let lambdas = parse_lambdas(a.lambdas.as_deref())?;
    eprintln!("sweeping {} over {} weights, {} epochs each", q.as_str(), lambdas.len(), a.sweep_epochs);
    let rows = lambda_sweep(&p.data, &p.cfg, q, &lambdas, a.sweep_epochs, jobs).map_err(train_err)?;
    let table = sweep_table(q, &rows);
    let mut files = Vec::new();
    write(&a.out.join("sweep.tsv"), &table, &mut files)?;
    print!("{table}");
    let mut m = RunManifest::new("sweep", started);
    m.config_sha256 = Some(sha256_hex(p.cfg.to_canonical_string().as_bytes()));
    m.dataset_sha256 = Some(p.dataset_sha256.clone());
    m.seeds = vec![p.cfg.seeds[0]];
    m.finish(&a.out.join("manifest.json"), &files)?;
    Ok(())
}
