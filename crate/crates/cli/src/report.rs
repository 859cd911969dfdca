//! `eval` and `render`.

use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, ValueEnum};

use phaseforge::eval::{evaluate, near_label_change, render_map, write_reports, Cell, EvalError, ALIGN_TOL};
use phaseforge::fsutil::write_atomic;
use phaseforge::prediction::Predictions;

use crate::common::{infer_comp_step, TruthArgs};
use crate::manifest::{now_unix, sidecar, RunManifest};
use crate::{fail, CliError, CliResult, WithCode, EXIT_ALIGNMENT, EXIT_CONFIG, EXIT_FAILURE};

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Prediction file.
    #[arg(long)]
    pub pred: PathBuf,
    #[command(flatten)]
    pub truth: TruthArgs,
    /// Directory for report.txt, report.csv, mismatch.csv and multiplicity.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also report how many mismatches sit next to a truth label change on
    /// the lattice with this step in at.%.
    #[arg(long)]
    pub near_change_step: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MapKind {
    /// Colour by predicted phase count.
    Multiplicity,
    /// Colour by agreement with the truth.
    Match,
}

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long, value_enum, default_value = "multiplicity")]
    pub kind: MapKind,
    /// Output PPM file.
    #[arg(long)]
    pub out: PathBuf,
    /// Only points inside this subsystem.
    #[arg(long)]
    pub system: Option<String>,
    /// Lattice step in at.%; inferred from the points when absent.
    #[arg(long)]
    pub comp_step: Option<u32>,
    #[command(flatten)]
    pub truth: TruthArgs,
}

fn eval_err(e: EvalError) -> CliError {
    let code = match e {
        EvalError::Misaligned { .. } | EvalError::Shape(_) => EXIT_ALIGNMENT,
        EvalError::Step(_) | EvalError::Render(_) => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    };
    CliError { code, error: e.into() }
}

fn load_pred(path: &std::path::Path) -> CliResult<Predictions> {
    Predictions::load(path)
        .with_context(|| format!("loading {}", path.display()))
        .code(EXIT_CONFIG)
}

fn check_aligned(pred: &Predictions, truth: &crate::common::Truth) -> CliResult<()> {
    if pred.len() != truth.states.len() {
        return fail(
            EXIT_ALIGNMENT,
            format!("{} predicted points but {} truth points", pred.len(), truth.states.len()),
        );
    }
    for (i, (a, b)) in pred.states.iter().zip(&truth.states).enumerate() {
        let far = (a.t - b.t).abs() > ALIGN_TOL || a.x.iter().zip(&b.x).any(|(u, v)| (u - v).abs() > ALIGN_TOL);
        if far {
            return fail(EXIT_ALIGNMENT, format!("point {i} differs between predictions and truth"));
        }
    }
    Ok(())
}

pub fn eval(a: &EvalArgs, jobs: usize) -> CliResult<()> {
    let started = now_unix();
    let pred = load_pred(&a.pred)?;
    let truth = a.truth.resolve(&pred, jobs)?;
    check_aligned(&pred, &truth)?;
    let report = evaluate(&pred, &truth.states, &truth.labels).map_err(eval_err)?;
    let mut text = report.to_text();
    if let Some(step) = a.near_change_step {
        let near = near_label_change(&truth.states, &truth.labels, step).map_err(eval_err)?;
        let mis: Vec<usize> = (0..pred.len()).filter(|&i| pred.labels[i] != truth.labels[i]).collect();
        let close = mis.iter().filter(|&&i| near[i]).count();
        text.push_str(&format!("mismatches near a label change: {close}/{}\n", mis.len()));
    }
    print!("{text}");
    if let Some(dir) = &a.out {
        let mut files = write_reports(dir, &report, &pred, &truth.labels).map_err(eval_err)?;
        if a.near_change_step.is_some() {
            let p = dir.join("report.txt");
            write_atomic(&p, text.as_bytes()).with_context(|| format!("writing {}", p.display()))?;
        }
        files.sort();
        let mut m = RunManifest::new("eval", started);
        m.dataset_sha256 = truth.dataset_sha256.clone();
        m.input(&a.pred)?;
        m.finish(&dir.join("manifest.json"), &files)?;
    }
    Ok(())
}

pub fn render(a: &RenderArgs, jobs: usize) -> CliResult<()> {
    let started = now_unix();
    let mut pred = load_pred(&a.pred)?;
    let mut truth_labels = None;
    if a.kind == MapKind::Match || a.truth.given() {
        let truth = a.truth.resolve(&pred, jobs)?;
        check_aligned(&pred, &truth)?;
        truth_labels = Some(truth.labels);
    }
    if let Some(sys) = &a.system {
        let mask = pred.elements.parse_system(sys).code(EXIT_CONFIG)?;
        let keep: Vec<usize> = (0..pred.len()).filter(|&i| pred.states[i].present() & !mask == 0).collect();
        if keep.is_empty() {
            return fail(EXIT_CONFIG, format!("no points inside {sys}"));
        }
        pred = Predictions {
            states: keep.iter().map(|&i| pred.states[i].clone()).collect(),
            probs: keep.iter().flat_map(|&i| pred.probs[i * pred.phases.len()..(i + 1) * pred.phases.len()].to_vec()).collect(),
            labels: keep.iter().map(|&i| pred.labels[i]).collect(),
            flags: keep.iter().map(|&i| pred.flags[i]).collect(),
            ..pred
        };
        truth_labels = truth_labels.map(|t| keep.iter().map(|&i| t[i]).collect());
    }
    let cells: Vec<Cell> = match (a.kind, &truth_labels) {
        (MapKind::Match, Some(t)) => pred.labels.iter().zip(t).map(|(p, t)| Cell::Match(p == t)).collect(),
        (MapKind::Match, None) => return fail(EXIT_CONFIG, "a match map needs --truth or --oracle"),
        (MapKind::Multiplicity, _) => pred.labels.iter().map(|l| Cell::Multiplicity(l.len())).collect(),
    };
    let step = match a.comp_step {
        Some(s) => s,
        None => infer_comp_step(&pred.states)?,
    };
    let ppm = render_map(&pred.states, &cells, step).map_err(eval_err)?;
    write_atomic(&a.out, &ppm).with_context(|| format!("writing {}", a.out.display()))?;
    let mut m = RunManifest::new("render", started);
    m.input(&a.pred)?;
    m.finish(&sidecar(&a.out), &[a.out.clone()])?;
    eprintln!("wrote {} ({} points)", a.out.display(), pred.len());
    Ok(())
}
