//! Training harness: AdamW with cosine annealing, early stopping on
//! validation Macro-F1, multi-seed runs, threshold tuning, random
//! hyperparameter search and penalty-weight sweeps.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::dataio::{quantize9, DataError, Dataset, PhaseLabelSet, SplitTag};
use crate::decode::threshold;
use crate::elemgraph::{ElementGraph, GraphBuilder, GraphError};
use crate::eval::{f1_per_class, macro_f1};
use crate::gatcore::{backward_acc, forward, predict, GatError, Mode, ModelConfig, ModelParams};
use crate::losses::{default_beta, total_loss, LossAux, LossConfig, LossError, Penalty};
use crate::neighbors::{build_neighbor_graph, NeighborGraph, NeighborParams};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// Threshold grid `{0.05, 0.10, ..., 0.95}`.
pub const THRESHOLD_STEPS: usize = 20;

const TAG_SHUFFLE: u64 = 1;
const TAG_DROPOUT: u64 = 2;
const TAG_SEARCH: u64 = 3;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("train config: {0}")]
    Config(String),
    #[error("training diverged (seed {seed}, epoch {epoch}): {detail}")]
    Divergence { seed: u64, epoch: usize, detail: String },
    #[error(transparent)]
    Model(#[from] GatError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// How focal-loss class weights are chosen.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ClassWeights {
    /// Inverse positive frequency over the training split.
    #[default]
    Auto,
    Ones,
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden_dim: usize,
    pub layers: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub dropout: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Epochs without improvement tolerated before stopping.
    pub patience: usize,
    /// Train every epoch regardless of validation progress.
    pub fixed_epochs: bool,
    pub seeds: Vec<u64>,
    pub self_loops: bool,
    pub class_weights: ClassWeights,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 160,
            layers: 3,
            batch_size: 32,
            lr: 1e-3,
            dropout: 0.05,
            weight_decay: 6e-4,
            max_epochs: 100,
            patience: 15,
            fixed_epochs: false,
            seeds: (0..10).collect(),
            self_loops: true,
            class_weights: ClassWeights::Auto,
            loss: LossConfig::default(),
        }
    }
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct LossFile {
    penalty: Option<Penalty>,
    lambda: Option<f64>,
    gamma_focal: Option<f64>,
    gamma_gpr: Option<f64>,
    gamma_pure: Option<f64>,
    sigma_x: Option<f64>,
    sigma_t: Option<f64>,
    k_nn: Option<usize>,
    delta: Option<f64>,
    class_weights: Option<WeightsFile>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum WeightsFile {
    Named(String),
    Fixed(Vec<f64>),
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    hidden_dim: Option<usize>,
    layers: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    dropout: Option<f64>,
    weight_decay: Option<f64>,
    max_epochs: Option<usize>,
    patience: Option<usize>,
    fixed_epochs: Option<bool>,
    seeds: Option<Vec<u64>>,
    self_loops: Option<bool>,
    #[serde(default)]
    loss: LossFile,
}

impl TrainConfig {
    /// Reads the `[train]` table (and its `[train.loss]` sub-table) of a run
    /// config; absent keys keep their defaults.
    pub fn from_toml_value(v: toml::Value) -> Result<Self, TrainError> {
        let f: TrainFile = v.try_into().map_err(|e: toml::de::Error| TrainError::Config(e.to_string()))?;
        let d = Self::default();
        let mut loss = d.loss.clone();
        let l = f.loss;
        loss.penalty = l.penalty.unwrap_or(loss.penalty);
        loss.lambda = l.lambda.unwrap_or(loss.lambda);
        loss.gamma_focal = l.gamma_focal.unwrap_or(loss.gamma_focal);
        loss.gamma_gpr = l.gamma_gpr.unwrap_or(loss.gamma_gpr);
        loss.gamma_pure = l.gamma_pure.unwrap_or(loss.gamma_pure);
        loss.sigma_x = l.sigma_x.unwrap_or(loss.sigma_x);
        loss.sigma_t = l.sigma_t.unwrap_or(loss.sigma_t);
        loss.k_nn = l.k_nn.unwrap_or(loss.k_nn);
        loss.delta = l.delta.unwrap_or(loss.delta);
        let class_weights = match l.class_weights {
            None => d.class_weights.clone(),
            Some(WeightsFile::Named(s)) => match s.as_str() {
                "auto" => ClassWeights::Auto,
                "ones" => ClassWeights::Ones,
                other => return Err(TrainError::Config(format!("unknown class_weights {other:?}"))),
            },
            Some(WeightsFile::Fixed(v)) => ClassWeights::Fixed(v),
        };
        let cfg = Self {
            hidden_dim: f.hidden_dim.unwrap_or(d.hidden_dim),
            layers: f.layers.unwrap_or(d.layers),
            batch_size: f.batch_size.unwrap_or(d.batch_size),
            lr: f.lr.unwrap_or(d.lr),
            dropout: f.dropout.unwrap_or(d.dropout),
            weight_decay: f.weight_decay.unwrap_or(d.weight_decay),
            max_epochs: f.max_epochs.unwrap_or(d.max_epochs),
            patience: f.patience.unwrap_or(d.patience),
            fixed_epochs: f.fixed_epochs.unwrap_or(d.fixed_epochs),
            seeds: f.seeds.unwrap_or(d.seeds),
            self_loops: f.self_loops.unwrap_or(d.self_loops),
            class_weights,
            loss,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.batch_size == 0 || self.max_epochs == 0 || self.layers == 0 {
            return bad("batch_size, max_epochs and layers must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must lie in [0, 1)", self.dropout));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay {} must be non-negative", self.weight_decay));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if let ClassWeights::Fixed(w) = &self.class_weights {
            if w.iter().any(|&b| !(b > 0.0 && b.is_finite())) {
                return bad("class weights must be positive".into());
            }
        }
        self.loss.validate()?;
        self.model_config(1)?;
        Ok(())
    }

    pub fn model_config(&self, n_out: usize) -> Result<ModelConfig, TrainError> {
        let m = ModelConfig::with_hidden(self.hidden_dim, n_out)?;
        let m = ModelConfig { layers: self.layers, ..m };
        m.validate()?;
        Ok(m)
    }

    /// Canonical text of every field, for hashing and run manifests.
    pub fn to_canonical_string(&self) -> String {
        let l = &self.loss;
        let weights = match &self.class_weights {
            ClassWeights::Auto => "\"auto\"".to_string(),
            ClassWeights::Ones => "\"ones\"".to_string(),
            ClassWeights::Fixed(v) => format!("{v:?}"),
        };
        format!(
            "[train]\nhidden_dim = {}\nlayers = {}\nbatch_size = {}\nlr = {:?}\ndropout = {:?}\n\
             weight_decay = {:?}\nmax_epochs = {}\npatience = {}\nfixed_epochs = {}\nseeds = {:?}\n\
             self_loops = {}\n\n[train.loss]\npenalty = \"{}\"\nlambda = {:?}\ngamma_focal = {:?}\n\
             gamma_gpr = {:?}\ngamma_pure = {:?}\nsigma_x = {:?}\nsigma_t = {:?}\nk_nn = {}\ndelta = {:?}\n\
             class_weights = {}\n",
            self.hidden_dim,
            self.layers,
            self.batch_size,
            self.lr,
            self.dropout,
            self.weight_decay,
            self.max_epochs,
            self.patience,
            self.fixed_epochs,
            self.seeds,
            self.self_loops,
            l.penalty.as_str(),
            l.lambda,
            l.gamma_focal,
            l.gamma_gpr,
            l.gamma_pure,
            l.sigma_x,
            l.sigma_t,
            l.k_nn,
            l.delta,
            weights
        )
    }
}

/// First and second moments plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One AdamW step with decoupled weight decay. Returns `false` and leaves
/// everything untouched when a gradient is non-finite.
pub fn optimizer_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, weight_decay: f64) -> bool {
    assert_eq!(params.len(), grads.len());
    if grads.iter().any(|g| !g.is_finite()) {
        return false;
    }
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let mh = state.m[i] / bc1;
        let vh = state.v[i] / bc2;
        let p = params[i] - lr * weight_decay * params[i];
        params[i] = p - lr * mh / (vh.sqrt() + ADAM_EPS);
    }
    true
}

/// Cosine annealing from `lr0` at epoch 0 to zero at the last epoch.
pub fn cosine_lr(epoch: usize, max_epochs: usize, lr0: f64) -> f64 {
    if max_epochs <= 1 {
        return lr0;
    }
    let frac = epoch as f64 / (max_epochs - 1) as f64;
    lr0 * (1.0 + (std::f64::consts::PI * frac).cos()) / 2.0
}

/// Independent stream for a (seed, epoch, index, purpose) tuple.
pub fn derived_rng(seed: u64, epoch: u64, index: u64, tag: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (i, v) in [seed, epoch, index, tag].iter().enumerate() {
        key[i * 8..(i + 1) * 8].copy_from_slice(&v.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Everything training needs, precomputed once per dataset.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub k: usize,
    pub graphs: Vec<ElementGraph>,
    /// Row-major `N x K` targets.
    pub y: Vec<f64>,
    pub labels: Vec<PhaseLabelSet>,
    pub caps: Vec<usize>,
    pub pure: Vec<bool>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Over training samples, indexed by position in `train`.
    pub train_neighbors: NeighborGraph,
}

impl TrainData {
    pub fn new(ds: &Dataset, builder: &GraphBuilder, loss: &LossConfig) -> Result<Self, TrainError> {
        let k = ds.vocab.len();
        let graphs = ds
            .samples
            .iter()
            .map(|s| builder.build(&s.state))
            .collect::<Result<Vec<_>, _>>()?;
        let labels: Vec<PhaseLabelSet> = ds.samples.iter().map(|s| s.labels).collect();
        let y = labels
            .iter()
            .flat_map(|l| (0..k).map(move |c| if l.contains(c) { 1.0 } else { 0.0 }))
            .collect();
        let caps = ds
            .samples
            .iter()
            .map(|s| s.state.x.iter().filter(|&&v| v > loss.eps_element).count())
            .collect::<Vec<_>>();
        let pure = caps.iter().map(|&c| c == 1).collect();
        let train = ds.indices(SplitTag::Train);
        let val = ds.indices(SplitTag::Val);
        let test = ds.indices(SplitTag::Test);
        if train.is_empty() || val.is_empty() {
            return Err(TrainError::Config(
                "dataset needs non-empty train and validation splits".into(),
            ));
        }
        let pts: Vec<&[f64]> = train.iter().map(|&i| ds.samples[i].state.x.as_slice()).collect();
        let tn: Vec<f64> = train.iter().map(|&i| graphs[i].t_norm).collect();
        let train_neighbors = build_neighbor_graph(
            &pts,
            &tn,
            NeighborParams {
                sigma_x: loss.sigma_x,
                sigma_t: loss.sigma_t,
                k: loss.k_nn,
            },
        );
        Ok(Self {
            k,
            graphs,
            y,
            labels,
            caps,
            pure,
            train,
            val,
            test,
            train_neighbors,
        })
    }

    /// Eval-mode probabilities for the given samples, row-major.
    pub fn predict(&self, params: &ModelParams, idx: &[usize]) -> Result<Vec<f64>, GatError> {
        let mut out = Vec::with_capacity(idx.len() * self.k);
        for &i in idx {
            out.extend(predict(params, &self.graphs[i])?);
        }
        Ok(out)
    }
}

/// Eval-mode probabilities over arbitrary graphs, row-major.
pub fn predict_probs(params: &ModelParams, graphs: &[ElementGraph]) -> Result<Vec<f64>, GatError> {
    let mut out = Vec::with_capacity(graphs.len() * params.cfg.n_out);
    for g in graphs {
        out.extend(predict(params, g)?);
    }
    Ok(out)
}

/// Macro-F1 of `p > t` against truth labels.
pub fn macro_f1_at(p: &[f64], truth: &[PhaseLabelSet], thresholds: &[f64]) -> f64 {
    let pred = threshold(p, thresholds).expect("threshold shape checked by caller");
    macro_f1(&f1_per_class(&pred, truth, thresholds.len()).expect("equal lengths"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_macro_f1: f64,
    pub skipped_steps: usize,
    /// Batches where the smoothing penalty found no neighbor pair.
    pub no_pair_batches: usize,
}

/// Per-class decision thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdVector {
    pub t: Vec<f64>,
    /// Class fell back to 0.5 (no validation positives or constant scores).
    pub fallback: Vec<bool>,
}

impl ThresholdVector {
    pub fn uniform(k: usize, t: f64) -> Self {
        Self {
            t: vec![t; k],
            fallback: vec![false; k],
        }
    }

    pub fn to_text(&self, phases: &[String]) -> String {
        let mut s = String::from("# phase threshold fallback\n");
        for ((name, t), f) in phases.iter().zip(&self.t).zip(&self.fallback) {
            let _ = writeln!(s, "{name} {t:.2} {f}");
        }
        s
    }

    pub fn parse(text: &str, phases: &[String]) -> Result<Self, TrainError> {
        let mut t = vec![f64::NAN; phases.len()];
        let mut fallback = vec![false; phases.len()];
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let tok: Vec<&str> = line.split_whitespace().collect();
            let bad = || TrainError::Config(format!("bad threshold line {line:?}"));
            if tok.len() != 3 {
                return Err(bad());
            }
            let c = phases.iter().position(|p| p == tok[0]).ok_or_else(bad)?;
            t[c] = tok[1].parse().map_err(|_| bad())?;
            fallback[c] = tok[2].parse().map_err(|_| bad())?;
        }
        if let Some(c) = t.iter().position(|v| !v.is_finite()) {
            return Err(TrainError::Config(format!("no threshold for phase {}", phases[c])));
        }
        Ok(Self { t, fallback })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_macro_f1: f64,
    pub final_val_macro_f1: f64,
    pub stopped_early: bool,
    pub thresholds: ThresholdVector,
}

impl RunRecord {
    pub fn history_csv(&self) -> String {
        let mut s = String::from("epoch,lr,train_loss,val_macro_f1,best_val_macro_f1,skipped_steps,no_pair_batches\n");
        let mut best = f64::NEG_INFINITY;
        for e in &self.history {
            best = best.max(e.val_macro_f1);
            let _ = writeln!(
                s,
                "{},{:.12e},{:.12e},{:.12},{:.12},{},{}",
                e.epoch, e.lr, e.train_loss, e.val_macro_f1, best, e.skipped_steps, e.no_pair_batches
            );
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub record: RunRecord,
    /// Parameters of the best validation epoch.
    pub params: ModelParams,
}

fn class_weights(cfg: &TrainConfig, data: &TrainData) -> Result<Vec<f64>, TrainError> {
    Ok(match &cfg.class_weights {
        ClassWeights::Ones => Vec::new(),
        ClassWeights::Auto => {
            let tl: Vec<PhaseLabelSet> = data.train.iter().map(|&i| data.labels[i]).collect();
            default_beta(&tl, data.k)
        }
        ClassWeights::Fixed(w) => {
            if w.len() != data.k {
                return Err(TrainError::Config(format!("{} class weights for {} phases", w.len(), data.k)));
            }
            w.clone()
        }
    })
}

/// Trains one seed: seeded init, per-epoch reshuffle, per-sample dropout
/// streams, early stopping on validation Macro-F1 at threshold 0.5, then
/// threshold tuning on the best parameters.
pub fn train_one(data: &TrainData, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let k = data.k;
    let mut params = ModelParams::init(cfg.model_config(k)?, seed)?;
    let mut adam = AdamState::new(params.data.len());
    let loss_cfg = LossConfig {
        beta: class_weights(cfg, data)?,
        ..cfg.loss.clone()
    };
    let val_truth: Vec<PhaseLabelSet> = data.val.iter().map(|&i| data.labels[i]).collect();
    let half = vec![0.5; k];
    let diverged = |epoch: usize, detail: String| TrainError::Divergence { seed, epoch, detail };

    let mut history = Vec::new();
    let mut best_params = params.clone();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut bad_epochs = 0;
    let mut stopped_early = false;
    let mut grad = vec![0.0; params.data.len()];
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    for epoch in 0..cfg.max_epochs {
        let lr = cosine_lr(epoch, cfg.max_epochs, cfg.lr);
        order.sort_unstable();
        order.shuffle(&mut derived_rng(seed, epoch as u64, 0, TAG_SHUFFLE));
        let mut loss_sum = 0.0;
        let mut skipped = 0;
        let mut no_pairs = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let b = chunk.len();
            let mut traces = Vec::with_capacity(b);
            let mut p = Vec::with_capacity(b * k);
            let mut y = Vec::with_capacity(b * k);
            let mut caps = Vec::with_capacity(b);
            let mut pure = Vec::with_capacity(b);
            for &pos in chunk {
                let i = data.train[pos];
                let mut rng = derived_rng(seed, epoch as u64, i as u64, TAG_DROPOUT);
                let tr = match forward(&params, &data.graphs[i], Mode::Train(&mut rng), cfg.dropout) {
                    Ok(t) => t,
                    Err(GatError::NonFinite { layer }) => {
                        return Err(diverged(epoch, format!("non-finite activations at layer {layer}")))
                    }
                    Err(e) => return Err(e.into()),
                };
                p.extend_from_slice(&tr.probs);
                y.extend_from_slice(&data.y[i * k..(i + 1) * k]);
                caps.push(data.caps[i]);
                pure.push(data.pure[i]);
                traces.push(tr);
            }
            let aux = LossAux {
                caps: &caps,
                pure: &pure,
                batch: chunk,
                neighbors: Some(&data.train_neighbors),
            };
            let lv = total_loss(&loss_cfg, &p, &y, k, aux)?;
            if !lv.total.is_finite() {
                return Err(diverged(epoch, format!("loss is {}", lv.total)));
            }
            no_pairs += usize::from(lv.no_pairs);
            loss_sum += lv.total * b as f64;
            grad.iter_mut().for_each(|g| *g = 0.0);
            for (r, tr) in traces.iter().enumerate() {
                let gl: Vec<f64> = (0..k)
                    .map(|c| {
                        let pc = tr.probs[c];
                        lv.grad[r * k + c] * pc * (1.0 - pc)
                    })
                    .collect();
                backward_acc(&params, tr, &gl, &mut grad)?;
            }
            if !optimizer_step(&mut params.data, &grad, &mut adam, lr, cfg.weight_decay) {
                skipped += 1;
            }
        }
        if !params.is_finite() {
            return Err(diverged(epoch, "non-finite parameters".into()));
        }
        let pv = data.predict(&params, &data.val)?;
        let f1 = macro_f1_at(&pv, &val_truth, &half);
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / data.train.len() as f64,
            val_macro_f1: f1,
            skipped_steps: skipped,
            no_pair_batches: no_pairs,
        });
        if f1 > best_f1 {
            best_f1 = f1;
            best_epoch = epoch;
            best_params = params.clone();
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if !cfg.fixed_epochs && bad_epochs > cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }

    let final_f1 = history.last().map_or(f64::NAN, |e| e.val_macro_f1);
    let pv = data.predict(&best_params, &data.val)?;
    let thresholds = tune_thresholds(&pv, &val_truth, k);
    Ok(TrainOutcome {
        record: RunRecord {
            seed,
            history,
            best_epoch,
            best_val_macro_f1: best_f1,
            final_val_macro_f1: final_f1,
            stopped_early,
            thresholds,
        },
        params: best_params,
    })
}

/// Runs every configured seed on up to `jobs` threads; results keep seed
/// order and do not depend on `jobs`.
pub fn train_seeds(data: &TrainData, cfg: &TrainConfig, jobs: usize) -> Vec<Result<TrainOutcome, TrainError>> {
    parallel_map(&cfg.seeds, jobs, |&s| train_one(data, cfg, s))
}

/// Order-preserving map over `items` on up to `jobs` scoped threads.
pub fn parallel_map<T: Sync, U: Send, F: Fn(&T) -> U + Sync>(items: &[T], jobs: usize, f: F) -> Vec<U> {
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<U>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

fn class_f1(pred: impl Iterator<Item = bool>, truth: &[bool]) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (p, &t) in pred.zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let d = 2 * tp + fp + fn_;
    if d == 0 {
        1.0
    } else {
        (2 * tp) as f64 / d as f64
    }
}

/// Grid value `j / 20` for `j = 1..=19`.
pub fn threshold_grid() -> Vec<f64> {
    (1..THRESHOLD_STEPS).map(|j| j as f64 / THRESHOLD_STEPS as f64).collect()
}

/// Per-class threshold maximizing validation F1 over the 0.05 grid, ties to
/// the lower threshold. Classes without validation positives, or whose
/// scores are constant, get 0.5 and a flag.
pub fn tune_thresholds(p: &[f64], truth: &[PhaseLabelSet], k: usize) -> ThresholdVector {
    let n = truth.len();
    assert_eq!(p.len(), n * k, "probability shape");
    let grid = threshold_grid();
    let mut out = ThresholdVector::uniform(k, 0.5);
    for c in 0..k {
        let col: Vec<f64> = (0..n).map(|i| p[i * k + c]).collect();
        let pos: Vec<bool> = truth.iter().map(|l| l.contains(c)).collect();
        let constant = col.iter().all(|&v| v == col[0]);
        if !pos.iter().any(|&b| b) || constant {
            out.fallback[c] = true;
            continue;
        }
        let mut best = (f64::NEG_INFINITY, 0.5);
        for &t in &grid {
            let f = class_f1(col.iter().map(|&v| v > t), &pos);
            if f > best.0 {
                best = (f, t);
            }
        }
        out.t[c] = best.1;
    }
    out
}

/// Ranges sampled by [`random_search`]; learning rate and weight decay are
/// log-uniform.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub hidden_dim: Vec<usize>,
    pub batch_size: Vec<usize>,
    pub lr: (f64, f64),
    pub weight_decay: (f64, f64),
    pub dropout: (f64, f64),
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            hidden_dim: vec![64, 96, 128, 160, 192],
            batch_size: vec![16, 32, 64],
            lr: (1e-4, 1e-2),
            weight_decay: (1e-5, 1e-2),
            dropout: (0.0, 0.2),
        }
    }
}

impl SearchSpace {
    pub fn contains(&self, c: &TrainConfig) -> bool {
        self.hidden_dim.contains(&c.hidden_dim)
            && self.batch_size.contains(&c.batch_size)
            && (self.lr.0..=self.lr.1).contains(&c.lr)
            && (self.weight_decay.0..=self.weight_decay.1).contains(&c.weight_decay)
            && (self.dropout.0..=self.dropout.1).contains(&c.dropout)
    }
}

fn log_uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp()
}

/// The `budget` configurations a search with `seed` would train.
pub fn sample_configs(space: &SearchSpace, base: &TrainConfig, budget: usize, seed: u64) -> Vec<TrainConfig> {
    let mut rng = derived_rng(seed, 0, 0, TAG_SEARCH);
    (0..budget)
        .map(|_| TrainConfig {
            hidden_dim: *space.hidden_dim.choose(&mut rng).expect("non-empty hidden choices"),
            batch_size: *space.batch_size.choose(&mut rng).expect("non-empty batch choices"),
            lr: quantize9(log_uniform(&mut rng, space.lr)),
            weight_decay: quantize9(log_uniform(&mut rng, space.weight_decay)),
            dropout: quantize9(space.dropout.0 + rng.gen::<f64>() * (space.dropout.1 - space.dropout.0)),
            ..base.clone()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub cfg: TrainConfig,
    pub val_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub trials: Vec<Trial>,
    /// Index of the best trial; ties go to the earlier one.
    pub best: usize,
}

impl SearchResult {
    pub fn best_config(&self) -> &TrainConfig {
        &self.trials[self.best].cfg
    }

    pub fn to_table(&self) -> String {
        let mut s = String::from("trial\thidden_dim\tbatch_size\tlr\tweight_decay\tdropout\tval_macro_f1\n");
        for (i, t) in self.trials.iter().enumerate() {
            let c = &t.cfg;
            let _ = writeln!(
                s,
                "{i}\t{}\t{}\t{:.9}\t{:.9}\t{:.9}\t{:.6}",
                c.hidden_dim, c.batch_size, c.lr, c.weight_decay, c.dropout, t.val_macro_f1
            );
        }
        s
    }
}

/// Trains each sampled configuration on the first seed of `base` for up to
/// `epochs` epochs and keeps the one with the best validation Macro-F1.
pub fn random_search(
    data: &TrainData,
    base: &TrainConfig,
    space: &SearchSpace,
    budget: usize,
    seed: u64,
    epochs: usize,
    jobs: usize,
) -> Result<SearchResult, TrainError> {
    if budget == 0 {
        return Err(TrainError::Config("search budget must be at least 1".into()));
    }
    let train_seed = base.seeds[0];
    let cfgs: Vec<TrainConfig> = sample_configs(space, base, budget, seed)
        .into_iter()
        .map(|c| TrainConfig {
            max_epochs: epochs,
            seeds: vec![train_seed],
            ..c
        })
        .collect();
    let results = parallel_map(&cfgs, jobs, |c| train_one(data, c, train_seed));
    let mut trials = Vec::with_capacity(budget);
    for (cfg, r) in cfgs.into_iter().zip(results) {
        trials.push(Trial {
            val_macro_f1: r?.record.best_val_macro_f1,
            cfg,
        });
    }
    let mut best = 0;
    for (i, t) in trials.iter().enumerate() {
        if t.val_macro_f1 > trials[best].val_macro_f1 {
            best = i;
        }
    }
    Ok(SearchResult { trials, best })
}

/// `{0.05, 0.10, ..., 0.45}`.
pub fn default_lambda_grid() -> Vec<f64> {
    (1..=9).map(|i| quantize9(i as f64 * 0.05)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub best_val_macro_f1: f64,
    pub final_val_macro_f1: f64,
}

/// Fixed-length runs, one per λ, with the penalty `q` and the first seed.
pub fn lambda_sweep(
    data: &TrainData,
    base: &TrainConfig,
    q: Penalty,
    lambdas: &[f64],
    epochs: usize,
    jobs: usize,
) -> Result<Vec<SweepRow>, TrainError> {
    if q == Penalty::None {
        return Err(TrainError::Config("a sweep needs a physics penalty".into()));
    }
    let seed = base.seeds[0];
    let cfgs: Vec<TrainConfig> = lambdas
        .iter()
        .map(|&lambda| TrainConfig {
            max_epochs: epochs,
            fixed_epochs: true,
            seeds: vec![seed],
            loss: LossConfig {
                penalty: q,
                lambda,
                ..base.loss.clone()
            },
            ..base.clone()
        })
        .collect();
    let results = parallel_map(&cfgs, jobs, |c| train_one(data, c, seed));
    lambdas
        .iter()
        .zip(results)
        .map(|(&lambda, r)| {
            let rec = r?.record;
            Ok(SweepRow {
                lambda,
                best_val_macro_f1: rec.best_val_macro_f1,
                final_val_macro_f1: rec.final_val_macro_f1,
            })
        })
        .collect()
}

/// One column per λ, one row per metric.
pub fn sweep_table(q: Penalty, rows: &[SweepRow]) -> String {
    let mut s = format!("lambda_{}", q.as_str());
    for r in rows {
        let _ = write!(s, "\t{:.2}", r.lambda);
    }
    s.push_str("\nbest_val_macro_f1");
    for r in rows {
        let _ = write!(s, "\t{:.6}", r.best_val_macro_f1);
    }
    s.push_str("\nfinal_val_macro_f1");
    for r in rows {
        let _ = write!(s, "\t{:.6}", r.final_val_macro_f1);
    }
    s.push('\n');
    s
}
