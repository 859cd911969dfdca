//! Argument parsing and loading shared by several subcommands.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::Args;

use phaseforge::dataio::{load_dataset, quantize9, Dataset, ElementMask, ElementSet, PhaseLabelSet, Sample, SplitTag, StatePoint};
use phaseforge::prediction::Predictions;
use phaseforge::thermo_oracle::{all_subsets, inclusive_range, ModelSet, Oracle};
use phaseforge::train::parallel_map;

use crate::{fail, CliResult, WithCode, EXIT_CONFIG, EXIT_GENERATION};

pub const KELVIN_OFFSET: f64 = 273.15;

/// `start:stop:step` or a single value; inclusive of `stop`.
pub fn parse_t_spec(spec: &str, celsius: bool) -> CliResult<Vec<f64>> {
    let shift = if celsius { KELVIN_OFFSET } else { 0.0 };
    let parts: Vec<&str> = spec.split(':').collect();
    let nums = parts
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| anyhow!("bad temperature spec {spec:?}"))
        .code(EXIT_CONFIG)?;
    let ts = match nums.as_slice() {
        [t] => vec![quantize9(t + shift)],
        [a, b, s] if *s > 0.0 && b >= a => inclusive_range(a + shift, b + shift, *s),
        _ => return fail(EXIT_CONFIG, format!("temperature spec {spec:?} is not start:stop:step with step > 0")),
    };
    if ts.is_empty() || ts.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        return fail(EXIT_CONFIG, format!("temperature spec {spec:?} gives non-positive temperatures"));
    }
    Ok(ts)
}

/// `all`, `none`, or a comma-separated list such as `Ag-Bi,Cu-Sn`; every
/// listed system must have exactly `order` elements.
pub fn parse_systems(spec: &str, elements: &ElementSet, order: u32) -> CliResult<Vec<ElementMask>> {
    match spec {
        "all" => Ok(all_subsets(elements.len(), order)),
        "none" => Ok(Vec::new()),
        list => {
            let mut out = Vec::new();
            for s in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let m = elements.parse_system(s).code(EXIT_CONFIG)?;
                if m.count_ones() != order {
                    return fail(EXIT_CONFIG, format!("{s} is not a {order}-element system"));
                }
                if !out.contains(&m) {
                    out.push(m);
                }
            }
            Ok(out)
        }
    }
}

pub fn parse_split(s: &str) -> CliResult<Option<SplitTag>> {
    Ok(match s {
        "all" => None,
        "train" => Some(SplitTag::Train),
        "val" => Some(SplitTag::Val),
        "test" => Some(SplitTag::Test),
        other => return fail(EXIT_CONFIG, format!("unknown split {other:?}; use train, val, test or all")),
    })
}

pub fn load_models(path: Option<&Path>) -> CliResult<ModelSet> {
    match path {
        None => Ok(ModelSet::default9()),
        Some(p) => ModelSet::load(p)
            .with_context(|| format!("loading model file {}", p.display()))
            .code(EXIT_CONFIG),
    }
}

/// Loads a dataset; phase admissibility comes from `models` when its element
/// set and phase names match the file.
pub fn load_data(path: &Path, models: &ModelSet) -> CliResult<Dataset> {
    let mut ds = load_dataset(path)
        .with_context(|| format!("loading dataset {}", path.display()))
        .code(EXIT_CONFIG)?;
    if ds.elements == models.elements && ds.vocab.names() == models.vocab.names() {
        ds.vocab = models.vocab.clone();
    }
    Ok(ds)
}

pub fn select(ds: &Dataset, split: Option<SplitTag>) -> Vec<&Sample> {
    match split {
        None => ds.samples.iter().collect(),
        Some(tag) => ds.subset(tag),
    }
}

/// Splits `0..n` into at most `jobs` contiguous ranges.
pub fn chunks(n: usize, jobs: usize) -> Vec<std::ops::Range<usize>> {
    let parts = jobs.clamp(1, n.max(1));
    let size = n.div_ceil(parts);
    (0..parts).map(|i| (i * size).min(n)..((i + 1) * size).min(n)).filter(|r| !r.is_empty()).collect()
}

/// Labels every state with the oracle, one oracle per chunk.
pub fn oracle_labels(models: &ModelSet, states: &[StatePoint], jobs: usize) -> CliResult<Vec<PhaseLabelSet>> {
    let ranges = chunks(states.len(), jobs);
    let parts = parallel_map(&ranges, jobs, |r| {
        let mut oracle = Oracle::new(models.clone());
        states[r.clone()]
            .iter()
            .map(|q| {
                let res = oracle.equilibrium(q)?;
                Ok(Sample::from_fractions(q.clone(), &res.fractions).labels)
            })
            .collect::<Result<Vec<_>, phaseforge::thermo_oracle::ThermoError>>()
    });
    let mut out = Vec::with_capacity(states.len());
    for p in parts {
        out.extend(p.context("oracle labelling failed").code(EXIT_GENERATION)?);
    }
    Ok(out)
}

/// Where the reference labels come from.
#[derive(Debug, Clone, Args)]
pub struct TruthArgs {
    /// Dataset whose samples, in order, align with the predictions.
    #[arg(long, conflicts_with = "oracle")]
    pub truth: Option<PathBuf>,
    /// Split of `--truth` to compare against: train, val, test or all.
    #[arg(long, default_value = "all")]
    pub split: String,
    /// Label the predicted points live with the oracle.
    #[arg(long)]
    pub oracle: bool,
    /// Thermodynamic model file for `--oracle`.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

pub struct Truth {
    pub states: Vec<StatePoint>,
    pub labels: Vec<PhaseLabelSet>,
    pub dataset_sha256: Option<String>,
}

impl TruthArgs {
    pub fn given(&self) -> bool {
        self.truth.is_some() || self.oracle
    }

    pub fn resolve(&self, pred: &Predictions, jobs: usize) -> CliResult<Truth> {
        let models = load_models(self.model.as_deref())?;
        if let Some(path) = &self.truth {
            let ds = load_data(path, &models)?;
            if ds.vocab.names() != pred.phases.as_slice() || ds.elements != pred.elements {
                return fail(crate::EXIT_ALIGNMENT, "truth dataset and predictions use different elements or phases");
            }
            let sel = select(&ds, parse_split(&self.split)?);
            return Ok(Truth {
                states: sel.iter().map(|s| s.state.clone()).collect(),
                labels: sel.iter().map(|s| s.labels).collect(),
                dataset_sha256: Some(crate::manifest::sha256_file(path)?),
            });
        }
        if self.oracle {
            if models.elements != pred.elements || models.vocab.names() != pred.phases.as_slice() {
                return fail(EXIT_CONFIG, "oracle model and predictions use different elements or phases");
            }
            let labels = oracle_labels(&models, &pred.states, jobs)?;
            return Ok(Truth {
                states: pred.states.clone(),
                labels,
                dataset_sha256: None,
            });
        }
        fail(EXIT_CONFIG, "no truth source; pass --truth DATASET or --oracle")
    }
}

/// Composition step in at.% implied by the smallest non-zero fraction.
pub fn infer_comp_step(states: &[StatePoint]) -> CliResult<u32> {
    let min = states
        .iter()
        .flat_map(|s| s.x.iter().copied())
        .filter(|&v| v > 1e-9)
        .fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return fail(EXIT_CONFIG, "cannot infer a composition step from the points");
    }
    let step = (min * 100.0).round() as u32;
    if step == 0 || 100 % step != 0 || (min * 100.0 - step as f64).abs() > 1e-6 {
        return fail(EXIT_CONFIG, format!("points are not on a lattice (smallest fraction {min}); pass --comp-step"));
    }
    Ok(step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_specs() {
        assert_eq!(parse_t_spec("400:1000:300", false).unwrap(), vec![400.0, 700.0, 1000.0]);
        assert_eq!(parse_t_spec("700", true).unwrap(), vec![973.15]);
        assert_eq!(parse_t_spec("913.15:1033.15:20", false).unwrap().len(), 7);
        for bad in ["", "1:2", "5:1:1", "1:2:0", "a:b:c", "-300", "0:2:1"] {
            assert_eq!(parse_t_spec(bad, false).unwrap_err().code, EXIT_CONFIG, "{bad}");
        }
    }

    #[test]
    fn system_lists() {
        let el = ElementSet::ag_bi_cu_sn();
        assert_eq!(parse_systems("all", &el, 2).unwrap().len(), 6);
        assert_eq!(parse_systems("all", &el, 3).unwrap().len(), 4);
        assert!(parse_systems("none", &el, 2).unwrap().is_empty());
        assert_eq!(parse_systems("Cu-Sn, Sn-Cu", &el, 2).unwrap().len(), 1);
        assert!(parse_systems("Ag-Bi-Cu", &el, 2).is_err());
        assert!(parse_systems("Ag-Xx", &el, 2).is_err());
    }

    #[test]
    fn chunking_covers_range() {
        for (n, j) in [(0, 3), (1, 4), (10, 3), (10, 10), (7, 1)] {
            let c = chunks(n, j);
            assert!(c.len() <= j);
            let flat: Vec<usize> = c.into_iter().flatten().collect();
            assert_eq!(flat, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn comp_step_inference() {
        let s = |a: f64| StatePoint::new(vec![a, 1.0 - a, 0.0, 0.0], 900.0);
        assert_eq!(infer_comp_step(&[s(0.0), s(0.02), s(0.5)]).unwrap(), 2);
        assert_eq!(infer_comp_step(&[s(0.25)]).unwrap(), 25);
        assert!(infer_comp_step(&[s(0.013)]).is_err());
    }
}
