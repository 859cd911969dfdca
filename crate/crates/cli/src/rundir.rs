//! Run directory layout.
//!
//! ```text
//! <run>/run.toml            training config plus the dataset description
//! <run>/properties.txt      element descriptor table used for the graphs
//! <run>/thresholds.txt      per-phase thresholds tuned on the seed ensemble
//! <run>/runs.csv            one row per seed
//! <run>/summary.txt         ensemble validation and test metrics
//! <run>/seed<k>/checkpoint.bin, history.csv, thresholds.txt
//! <run>/manifest.json
//! ```

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use phaseforge::dataio::{Dataset, ElementSet, PhaseVocabulary, TRange};
use phaseforge::elemgraph::{ElementProperties, GraphBuilder};
use phaseforge::gatcore::{load_checkpoint, ModelParams};
use phaseforge::train::{ThresholdVector, TrainConfig};

use crate::{fail, CliResult, WithCode, EXIT_CHECKPOINT, EXIT_CONFIG};

pub const RUN_FILE: &str = "run.toml";
pub const PROPS_FILE: &str = "properties.txt";
pub const THRESHOLDS_FILE: &str = "thresholds.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub dataset: String,
    pub dataset_sha256: String,
    pub elements: Vec<String>,
    pub phases: Vec<String>,
    /// Element mask each phase needs, in phase order.
    pub required: Vec<u32>,
    pub t_min: f64,
    pub t_max: f64,
}

impl DataSection {
    pub fn describe(ds: &Dataset, path: &Path, sha256: String) -> Self {
        Self {
            dataset: path.to_string_lossy().into_owned(),
            dataset_sha256: sha256,
            elements: ds.elements.names().to_vec(),
            phases: ds.vocab.names().to_vec(),
            required: (0..ds.vocab.len()).map(|k| ds.vocab.required(k)).collect(),
            t_min: ds.t_min,
            t_max: ds.t_max,
        }
    }
}

pub fn run_toml(cfg: &TrainConfig, data: &DataSection) -> anyhow::Result<String> {
    Ok(format!("{}\n[data]\n{}", cfg.to_canonical_string(), toml::to_string(data)?))
}

pub fn seed_dir(run: &Path, seed: u64) -> PathBuf {
    run.join(format!("seed{seed}"))
}

/// A loaded run: everything needed to rebuild graphs and decode.
#[derive(Debug, Clone)]
pub struct RunInfo {
    pub dir: PathBuf,
    pub cfg: TrainConfig,
    pub data: DataSection,
    pub elements: ElementSet,
    pub vocab: PhaseVocabulary,
    pub props: ElementProperties,
}

impl RunInfo {
    pub fn load(dir: &Path) -> CliResult<Self> {
        let path = dir.join(RUN_FILE);
        if !path.is_file() {
            return fail(EXIT_CHECKPOINT, format!("{} not found; is {} a run directory?", path.display(), dir.display()));
        }
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))
            .code(EXIT_CHECKPOINT)?;
        let mut table: toml::Table = text
            .parse()
            .with_context(|| format!("parsing {}", path.display()))
            .code(EXIT_CONFIG)?;
        let train = table.remove("train").unwrap_or(toml::Value::Table(Default::default()));
        let cfg = TrainConfig::from_toml_value(train).code(EXIT_CONFIG)?;
        let data: DataSection = table
            .remove("data")
            .context("run.toml lacks a [data] table")
            .code(EXIT_CONFIG)?
            .try_into()
            .context("bad [data] table in run.toml")
            .code(EXIT_CONFIG)?;
        let elements = ElementSet::new(&data.elements).code(EXIT_CONFIG)?;
        let vocab = PhaseVocabulary::new(&data.phases, data.required.clone(), &elements).code(EXIT_CONFIG)?;
        let props_path = dir.join(PROPS_FILE);
        let props = ElementProperties::load(&props_path, &elements)
            .with_context(|| format!("loading {}", props_path.display()))
            .code(EXIT_CHECKPOINT)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            cfg,
            data,
            elements,
            vocab,
            props,
        })
    }

    pub fn t_range(&self) -> TRange {
        TRange {
            min: self.data.t_min,
            max: self.data.t_max,
        }
    }

    pub fn graph_builder(&self) -> CliResult<GraphBuilder> {
        GraphBuilder::new(&self.props, self.t_range(), self.cfg.self_loops).code(EXIT_CONFIG)
    }

    /// One checkpoint per configured seed; any missing one is an error.
    pub fn checkpoints(&self) -> CliResult<Vec<ModelParams>> {
        self.cfg
            .seeds
            .iter()
            .map(|&s| {
                let p = seed_dir(&self.dir, s).join("checkpoint.bin");
                if !p.is_file() {
                    return fail(EXIT_CHECKPOINT, format!("missing checkpoint {}", p.display()));
                }
                let params = load_checkpoint(&p)
                    .with_context(|| format!("loading {}", p.display()))
                    .code(EXIT_CHECKPOINT)?;
                if params.cfg.n_out != self.vocab.len() {
                    return fail(
                        EXIT_CHECKPOINT,
                        format!("{} predicts {} phases, run has {}", p.display(), params.cfg.n_out, self.vocab.len()),
                    );
                }
                Ok(params)
            })
            .collect()
    }

    /// `--thresholds` may be a number (uniform), a file, or absent (the
    /// run's tuned thresholds).
    pub fn thresholds(&self, spec: Option<&str>) -> CliResult<Vec<f64>> {
        let k = self.vocab.len();
        let path = match spec {
            Some(s) => {
                if let Ok(t) = s.parse::<f64>() {
                    if !(0.0..1.0).contains(&t) {
                        return fail(EXIT_CONFIG, format!("threshold {t} must lie in [0, 1)"));
                    }
                    return Ok(vec![t; k]);
                }
                PathBuf::from(s)
            }
            None => self.dir.join(THRESHOLDS_FILE),
        };
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading thresholds {}", path.display()))
            .code(if spec.is_some() { EXIT_CONFIG } else { EXIT_CHECKPOINT })?;
        Ok(ThresholdVector::parse(&text, self.vocab.names()).code(EXIT_CONFIG)?.t)
    }
}
