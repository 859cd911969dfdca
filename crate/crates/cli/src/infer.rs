//! `predict` and `decode`.

use std::path::PathBuf;

use anyhow::Context;
use clap::Args;

use phaseforge::dataio::StatePoint;
use phaseforge::decode::{decode as decode_pipeline, ensemble_probs, feasibility_violations, threshold, DecodeConfig};
use phaseforge::eval::{dense_grid, GridConvention};
use phaseforge::gatcore::ModelParams;
use phaseforge::prediction::{PredFlags, Predictions};
use phaseforge::train::{parallel_map, predict_probs};

use crate::common::{chunks, load_data, load_models, parse_split, parse_t_spec, select};
use crate::manifest::{now_unix, sha256_file, sidecar, RunManifest};
use crate::rundir::RunInfo;
use crate::{fail, CliResult, WithCode, EXIT_ALIGNMENT, EXIT_CONFIG};

/// Stages of the feasibility projection.
#[derive(Debug, Clone, Args)]
pub struct DecodeToggles {
    /// Skip zeroing inadmissible phases at pure-element corners.
    #[arg(long)]
    pub no_prune: bool,
    /// Skip neighbour smoothing of probabilities.
    #[arg(long)]
    pub no_smooth: bool,
    /// Skip the phase-count cap.
    #[arg(long)]
    pub no_cap: bool,
    /// Apply phase admissibility at every point, not just pure corners.
    #[arg(long)]
    pub support_everywhere: bool,
}

impl DecodeToggles {
    pub fn config(&self, run: &RunInfo) -> DecodeConfig {
        DecodeConfig {
            prune: !self.no_prune,
            smooth: !self.no_smooth,
            cap: !self.no_cap,
            generalize_support: self.support_everywhere,
            ..DecodeConfig::new(run.t_range())
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Output prediction file.
    #[arg(long)]
    pub out: PathBuf,
    /// Subsystem of a dense grid, e.g. Ag-Bi or Ag-Bi-Cu-Sn.
    #[arg(long, conflicts_with = "points")]
    pub system: Option<String>,
    /// Grid composition step in at.%.
    #[arg(long, default_value_t = 1)]
    pub comp_step: u32,
    /// Grid temperatures, start:stop:step or a single value.
    #[arg(long)]
    pub t: Option<String>,
    #[arg(long)]
    pub celsius: bool,
    /// Which lattice points of the grid to keep: full, no-vertices or interior.
    #[arg(long, default_value = "full")]
    pub grid_convention: String,
    /// Dataset file whose states are predicted instead of a grid.
    #[arg(long)]
    pub points: Option<PathBuf>,
    /// Split of `--points`: train, val, test or all.
    #[arg(long, default_value = "all")]
    pub split: String,
    /// Apply the feasibility projection to the labels.
    #[arg(long)]
    pub decode: bool,
    /// Threshold file or a single value; defaults to the run's tuned thresholds.
    #[arg(long)]
    pub thresholds: Option<String>,
    #[command(flatten)]
    pub toggles: DecodeToggles,
}

#[derive(Debug, Clone, Args)]
pub struct DecodeArgs {
    /// Prediction file with raw probabilities.
    #[arg(long)]
    pub pred: PathBuf,
    /// Run directory supplying the vocabulary, temperature range and thresholds.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub thresholds: Option<String>,
    #[command(flatten)]
    pub toggles: DecodeToggles,
}

fn grid_states(a: &PredictArgs, run: &RunInfo) -> CliResult<Vec<StatePoint>> {
    if let Some(path) = &a.points {
        let ds = load_data(path, &load_models(None)?)?;
        if ds.elements != run.elements {
            return fail(EXIT_CONFIG, "points file and run use different element sets");
        }
        return Ok(select(&ds, parse_split(&a.split)?).iter().map(|s| s.state.clone()).collect());
    }
    let Some(system) = &a.system else {
        return fail(EXIT_CONFIG, "pass --system with --t, or --points");
    };
    let Some(t) = &a.t else {
        return fail(EXIT_CONFIG, "--system needs --t");
    };
    let mask = run.elements.parse_system(system).code(EXIT_CONFIG)?;
    let conv = GridConvention::parse(&a.grid_convention)
        .with_context(|| format!("unknown grid convention {:?}", a.grid_convention))
        .code(EXIT_CONFIG)?;
    let temps = parse_t_spec(t, a.celsius)?;
    dense_grid(run.elements.len(), mask, a.comp_step, &temps, conv).code(EXIT_CONFIG)
}

/// Mean seed probabilities over `states`, computed in chunks.
pub fn ensemble_predict(run: &RunInfo, params: &[ModelParams], states: &[StatePoint], jobs: usize) -> CliResult<Vec<f64>> {
    let builder = run.graph_builder()?;
    let ranges = chunks(states.len(), jobs);
    let parts = parallel_map(&ranges, jobs, |r| -> anyhow::Result<Vec<Vec<f64>>> {
        let graphs = states[r.clone()]
            .iter()
            .map(|q| builder.build(q))
            .collect::<Result<Vec<_>, _>>()?;
        params
            .iter()
            .map(|p| Ok(predict_probs(p, &graphs)?))
            .collect()
    });
    let mut per_seed = vec![Vec::with_capacity(states.len() * run.vocab.len()); params.len()];
    for part in parts {
        for (acc, p) in per_seed.iter_mut().zip(part?) {
            acc.extend(p);
        }
    }
    Ok(ensemble_probs(&per_seed).context("ensembling seeds")?)
}

fn clamp_flags(run: &RunInfo, states: &[StatePoint]) -> CliResult<Vec<PredFlags>> {
    let tr = run.t_range();
    states
        .iter()
        .map(|s| {
            Ok(PredFlags {
                fallback: false,
                clamped_t: tr.normalize(s.t).code(EXIT_CONFIG)?.1,
            })
        })
        .collect()
}

fn label(
    run: &RunInfo,
    pred: &mut Predictions,
    thresholds: &[f64],
    toggles: &DecodeToggles,
    decode: bool,
) -> CliResult<()> {
    if decode {
        let out = decode_pipeline(&pred.probs, &pred.states, thresholds, &run.vocab, &toggles.config(run))
            .context("decoding")?;
        for (f, fb) in pred.flags.iter_mut().zip(&out.fallback) {
            f.fallback = *fb;
        }
        pred.labels = out.labels;
    } else {
        pred.labels = threshold(&pred.probs, thresholds).context("thresholding")?;
        for f in &mut pred.flags {
            f.fallback = false;
        }
    }
    pred.decoded = decode;
    Ok(())
}

fn write_predictions(pred: &Predictions, out: &std::path::Path, m: RunManifest) -> CliResult<()> {
    pred.save(out).with_context(|| format!("writing {}", out.display()))?;
    m.finish(&sidecar(out), &[out.to_path_buf()])?;
    let violations = feasibility_violations(&pred.labels, &pred.states);
    let fallbacks = pred.flags.iter().filter(|f| f.fallback).count();
    let clamped = pred.flags.iter().filter(|f| f.clamped_t).count();
    eprintln!(
        "wrote {} ({} points, {violations} cap violations, {fallbacks} fallbacks, {clamped} outside the training T range)",
        out.display(),
        pred.len()
    );
    Ok(())
}

pub fn predict(a: &PredictArgs, jobs: usize) -> CliResult<()> {
    let started = now_unix();
    let run = RunInfo::load(&a.run)?;
    let params = run.checkpoints()?;
    let thresholds = run.thresholds(a.thresholds.as_deref())?;
    let states = grid_states(a, &run)?;
    if states.is_empty() {
        return fail(EXIT_CONFIG, "no points to predict");
    }
    eprintln!("predicting {} points with {} seed(s)", states.len(), params.len());
    let probs = ensemble_predict(&run, &params, &states, jobs)?;
    let mut pred = Predictions {
        elements: run.elements.clone(),
        phases: run.vocab.names().to_vec(),
        decoded: false,
        flags: clamp_flags(&run, &states)?,
        labels: Vec::new(),
        states,
        probs,
    };
    label(&run, &mut pred, &thresholds, &a.toggles, a.decode)?;
    let mut m = RunManifest::new("predict", started);
    m.config_sha256 = Some(sha256_file(&run.dir.join(crate::rundir::RUN_FILE))?);
    m.dataset_sha256 = match &a.points {
        Some(p) => Some(sha256_file(p)?),
        None => None,
    };
    m.seeds = run.cfg.seeds.clone();
    write_predictions(&pred, &a.out, m)
}

pub fn decode(a: &DecodeArgs) -> CliResult<()> {
    let started = now_unix();
    let run = RunInfo::load(&a.run)?;
    let mut pred = Predictions::load(&a.pred)
        .with_context(|| format!("loading {}", a.pred.display()))
        .code(EXIT_CONFIG)?;
    if !pred.vocab_matches(&run.vocab) || pred.elements != run.elements {
        return fail(EXIT_ALIGNMENT, "prediction file and run use different elements or phases");
    }
    let thresholds = run.thresholds(a.thresholds.as_deref())?;
    label(&run, &mut pred, &thresholds, &a.toggles, true)?;
    let mut m = RunManifest::new("decode", started);
    m.input(&a.pred)?;
    m.config_sha256 = Some(sha256_file(&run.dir.join(crate::rundir::RUN_FILE))?);
    m.seeds = run.cfg.seeds.clone();
    write_predictions(&pred, &a.out, m)
}
