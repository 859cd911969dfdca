//! `gen-data` and `split`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;

use phaseforge::dataio::{make_splits, save_dataset, Dataset, SplitReport};
use phaseforge::fsutil::write_atomic;
use phaseforge::thermo_oracle::{all_subsets, generate_dataset, lattice_count, GenerationPlan, Oracle, RefinementWindow, ThermoError};

use crate::common::{load_data, load_models, parse_systems, parse_t_spec};
use crate::manifest::{now_unix, sha256_file, sidecar, RunManifest};
use crate::{fail, CliResult, WithCode, EXIT_CONFIG, EXIT_GENERATION};

const BENCHMARK_TERNARIES: [&str; 3] = ["Ag-Bi-Cu", "Ag-Cu-Sn", "Bi-Cu-Sn"];

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    /// Output dataset file.
    #[arg(long)]
    pub out: PathBuf,
    /// Thermodynamic model file; defaults to the shipped nine-phase model.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Binary systems swept over `--t`: all, none or a list like Ag-Bi,Cu-Sn.
    #[arg(long, default_value = "all")]
    pub binaries: String,
    /// Ternary planes at `--isothermal`: benchmark, all, none or a list.
    #[arg(long, default_value = "benchmark")]
    pub ternaries: String,
    /// Quaternary sections at `--isothermal`: all or none.
    #[arg(long, default_value = "none")]
    pub quaternaries: String,
    /// Composition step in at.%.
    #[arg(long, default_value_t = 2)]
    pub step: u32,
    /// Binary temperature schedule, start:stop:step.
    #[arg(long, default_value = "913.15:1033.15:20")]
    pub t: String,
    /// Temperature of the ternary and quaternary planes.
    #[arg(long, default_value = "973.15")]
    pub isothermal: String,
    /// Extra temperatures for one system, SYSTEM:start:stop:step; repeatable.
    #[arg(long)]
    pub refine: Vec<String>,
    /// Read temperatures in degrees Celsius.
    #[arg(long)]
    pub celsius: bool,
    /// Split seed.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Positives per phase guaranteed in validation and in test where possible.
    #[arg(long, default_value_t = 3)]
    pub min_positives: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SplitArgs {
    /// Input dataset.
    #[arg(long)]
    pub data: PathBuf,
    /// Output dataset.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub min_positives: usize,
    /// Model file for phase admissibility when the dataset uses a custom vocabulary.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

fn parse_refine(spec: &str, a: &GenDataArgs, elements: &phaseforge::dataio::ElementSet) -> CliResult<RefinementWindow> {
    let Some((sys, range)) = spec.split_once(':') else {
        return fail(EXIT_CONFIG, format!("refinement {spec:?} is not SYSTEM:start:stop:step"));
    };
    let subsystem = elements.parse_system(sys).code(EXIT_CONFIG)?;
    let ts = parse_t_spec(range, a.celsius)?;
    let step = if ts.len() > 1 { ts[1] - ts[0] } else { 1.0 };
    Ok(RefinementWindow {
        subsystem,
        t_start: ts[0],
        t_stop: *ts.last().expect("non-empty"),
        t_step: step,
    })
}

pub fn plan_from_args(a: &GenDataArgs, models: &phaseforge::thermo_oracle::ModelSet) -> CliResult<GenerationPlan> {
    let el = &models.elements;
    if a.step == 0 || 100 % a.step != 0 {
        return fail(EXIT_CONFIG, format!("--step {} does not divide 100", a.step));
    }
    let mut subsystems = parse_systems(&a.binaries, el, 2)?;
    let ternaries = if a.ternaries == "benchmark" {
        BENCHMARK_TERNARIES.join(",")
    } else {
        a.ternaries.clone()
    };
    subsystems.extend(parse_systems(&ternaries, el, 3)?);
    match a.quaternaries.as_str() {
        "all" => subsystems.extend(all_subsets(el.len(), 4)),
        "none" => {}
        other => return fail(EXIT_CONFIG, format!("--quaternaries takes all or none, not {other:?}")),
    }
    if subsystems.is_empty() {
        return fail(EXIT_CONFIG, "no subsystems selected");
    }
    let iso = parse_t_spec(&a.isothermal, a.celsius)?;
    if iso.len() != 1 {
        return fail(EXIT_CONFIG, "--isothermal takes a single temperature");
    }
    let refinements = a
        .refine
        .iter()
        .map(|r| parse_refine(r, a, el))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(GenerationPlan {
        comp_step: a.step,
        t_schedule: parse_t_spec(&a.t, a.celsius)?,
        isothermal_t: iso[0],
        subsystems,
        refinements,
    })
}

pub fn split_report_text(ds: &Dataset, r: &SplitReport) -> String {
    let mut s = format!("train {} val {} test {}\n", r.sizes[0], r.sizes[1], r.sizes[2]);
    s.push_str("# phase total val test\n");
    for (k, name) in ds.vocab.names().iter().enumerate() {
        let _ = writeln!(s, "{name} {} {} {}", r.positives_total[k], r.positives_val[k], r.positives_test[k]);
    }
    if !r.under_represented.is_empty() {
        let names: Vec<&str> = r.under_represented.iter().map(|&k| ds.vocab.names()[k].as_str()).collect();
        let _ = writeln!(s, "under-represented {}", names.join(","));
    }
    s
}

fn split_report_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".split.txt");
    PathBuf::from(s)
}

fn write_split(ds: &Dataset, out: &Path, seed: u64, min_pos: usize, mut m: RunManifest) -> CliResult<()> {
    let (split, report) = make_splits(ds, seed, min_pos).code(EXIT_CONFIG)?;
    save_dataset(&split, out)
        .with_context(|| format!("writing {}", out.display()))?;
    let rp = split_report_path(out);
    let text = split_report_text(&split, &report);
    write_atomic(&rp, text.as_bytes()).with_context(|| format!("writing {}", rp.display()))?;
    m.seeds = vec![seed];
    m.dataset_sha256 = Some(sha256_file(out)?);
    m.finish(&sidecar(out), &[out.to_path_buf(), rp])?;
    eprintln!("wrote {} ({} samples)", out.display(), split.samples.len());
    eprint!("{text}");
    Ok(())
}

pub fn gen_data(a: &GenDataArgs) -> CliResult<()> {
    let started = now_unix();
    let models = load_models(a.model.as_deref())?;
    let plan = plan_from_args(a, &models)?;
    let n = (100 / a.step) as usize;
    let expected: usize = plan
        .subsystems
        .iter()
        .map(|&s| {
            let per_t = lattice_count(s.count_ones() as usize, n);
            let nt = if s.count_ones() >= 3 { 1 } else { plan.t_schedule.len() };
            per_t * nt
        })
        .sum();
    eprintln!("labelling about {expected} points over {} subsystems", plan.subsystems.len());
    let ds = generate_dataset(&mut Oracle::new(models), &plan).map_err(|e| {
        let code = if matches!(e, ThermoError::Config(_)) { EXIT_CONFIG } else { EXIT_GENERATION };
        crate::CliError {
            code,
            error: anyhow::Error::new(e).context("data generation failed"),
        }
    })?;
    let mut m = RunManifest::new("gen-data", started);
    if let Some(p) = &a.model {
        m.config_sha256 = Some(sha256_file(p)?);
    }
    write_split(&ds, &a.out, a.seed, a.min_positives, m)
}

pub fn split(a: &SplitArgs) -> CliResult<()> {
    let started = now_unix();
    let models = load_models(a.model.as_deref())?;
    let ds = load_data(&a.data, &models)?;
    write_split(&ds, &a.out, a.seed, a.min_positives, RunManifest::new("split", started))
}
