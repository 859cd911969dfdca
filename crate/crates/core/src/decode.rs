//! Inference-time projection onto admissible phase sets.
//!
//! The pipeline is fixed: prune inadmissible labels at pure corners, smooth
//! probabilities over the inference point set, threshold per class, then cap
//! the number of labels at the number of present elements. A corner always
//! ends with exactly one label and an empty set falls back to the most
//! probable admissible phase (flagged).

use crate::dataio::{PhaseLabelSet, PhaseVocabulary, StatePoint, TRange, EPS_ELEMENT};
use crate::neighbors::{build_neighbor_graph, NeighborParams};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DecodeError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no probability sets to ensemble")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub prune: bool,
    pub smooth: bool,
    pub cap: bool,
    pub neighbors: NeighborParams,
    /// Apply the admissibility rule at every point, not just pure corners.
    pub generalize_support: bool,
    /// Range used to normalize temperatures for the neighbor search.
    pub t_range: TRange,
}

impl DecodeConfig {
    pub fn new(t_range: TRange) -> Self {
        Self {
            prune: true,
            smooth: true,
            cap: true,
            neighbors: NeighborParams::default(),
            generalize_support: false,
            t_range,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    pub labels: Vec<PhaseLabelSet>,
    /// Post-smoothing probabilities used for ranking, row-major `N x K`.
    pub probs: Vec<f64>,
    /// Rows whose label set was filled by the argmax fallback.
    pub fallback: Vec<bool>,
}

fn check(p: &[f64], k: usize, n: usize) -> Result<(), DecodeError> {
    if k == 0 || p.len() != n * k {
        return Err(DecodeError::Shape(format!(
            "{} probabilities for {n} points and {k} classes",
            p.len()
        )));
    }
    Ok(())
}

/// Element-wise mean of equally shaped probability matrices.
pub fn ensemble_probs(sets: &[Vec<f64>]) -> Result<Vec<f64>, DecodeError> {
    let first = sets.first().ok_or(DecodeError::Empty)?;
    if sets.iter().any(|s| s.len() != first.len()) {
        return Err(DecodeError::Shape("probability sets differ in shape".into()));
    }
    let inv = 1.0 / sets.len() as f64;
    Ok((0..first.len())
        .map(|i| sets.iter().map(|s| s[i]).sum::<f64>() * inv)
        .collect())
}

/// Zeroes inadmissible phases at pure corners (everywhere with
/// `generalize_support`).
pub fn prune_pure(
    p: &[f64],
    states: &[StatePoint],
    vocab: &PhaseVocabulary,
    generalize_support: bool,
) -> Result<Vec<f64>, DecodeError> {
    let k = vocab.len();
    check(p, k, states.len())?;
    let mut out = p.to_vec();
    for (row, s) in out.chunks_exact_mut(k).zip(states) {
        let present = s.present();
        if present.count_ones() == 1 || generalize_support {
            for (c, v) in row.iter_mut().enumerate() {
                if !vocab.admissible(c, present) {
                    *v = 0.0;
                }
            }
        }
    }
    Ok(out)
}

/// `p'_n = (p_n + sum_m ω_nm p_m) / (1 + sum_m ω_nm)` over the k nearest
/// inference points.
pub fn smooth_probs(p: &[f64], k: usize, states: &[StatePoint], cfg: &DecodeConfig) -> Result<Vec<f64>, DecodeError> {
    check(p, k, states.len())?;
    if states.len() < 2 {
        return Ok(p.to_vec());
    }
    let xs: Vec<&[f64]> = states.iter().map(|s| s.x.as_slice()).collect();
    let t: Vec<f64> = states
        .iter()
        .map(|s| cfg.t_range.normalize(s.t).map(|r| r.0).unwrap_or(0.0))
        .collect();
    let ng = build_neighbor_graph(&xs, &t, cfg.neighbors);
    let mut out = vec![0.0; p.len()];
    for (n, nbrs) in ng.neighbors.iter().enumerate() {
        let row = &mut out[n * k..(n + 1) * k];
        row.copy_from_slice(&p[n * k..(n + 1) * k]);
        let mut wsum = 1.0;
        for &(m, w) in nbrs {
            wsum += w;
            for c in 0..k {
                row[c] += w * p[m * k + c];
            }
        }
        row.iter_mut().for_each(|v| *v /= wsum);
    }
    Ok(out)
}

/// Label `k` is active iff `p_k > t_k`.
pub fn threshold(p: &[f64], thresholds: &[f64]) -> Result<Vec<PhaseLabelSet>, DecodeError> {
    let k = thresholds.len();
    if k == 0 || p.len() % k != 0 {
        return Err(DecodeError::Shape("thresholds do not match the probabilities".into()));
    }
    Ok(p.chunks_exact(k)
        .map(|row| PhaseLabelSet::from_indices((0..k).filter(|&c| row[c] > thresholds[c])))
        .collect())
}

/// Keeps the `cap` most probable labels of `labels` (ties to the lower index).
pub fn top_labels(labels: PhaseLabelSet, row: &[f64], cap: usize) -> PhaseLabelSet {
    if labels.len() <= cap {
        return labels;
    }
    let mut idx: Vec<usize> = labels.iter().collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    PhaseLabelSet::from_indices(idx.into_iter().take(cap))
}

/// Caps each label set at the number of present elements.
pub fn gibbs_cap(labels: &[PhaseLabelSet], p: &[f64], states: &[StatePoint]) -> Result<Vec<PhaseLabelSet>, DecodeError> {
    if labels.len() != states.len() || states.is_empty() && !p.is_empty() {
        return Err(DecodeError::Shape("labels and states differ in length".into()));
    }
    if states.is_empty() {
        return Ok(Vec::new());
    }
    let k = p.len() / states.len();
    check(p, k, states.len())?;
    Ok(labels
        .iter()
        .zip(states)
        .enumerate()
        .map(|(n, (&l, s))| top_labels(l, &p[n * k..(n + 1) * k], present_count(s)))
        .collect())
}

fn present_count(s: &StatePoint) -> usize {
    s.x.iter().filter(|&&v| v > EPS_ELEMENT).count()
}

/// Most probable admissible phase, ties to the lower index.
fn argmax_admissible(row: &[f64], vocab: &PhaseVocabulary, present: u32) -> Option<usize> {
    let mut best: Option<usize> = None;
    for c in 0..row.len() {
        if vocab.admissible(c, present) && best.map_or(true, |b| row[c] > row[b]) {
            best = Some(c);
        }
    }
    best
}

/// Full pipeline: prune, smooth, threshold, cap, corner one-hot, fallback.
pub fn decode(
    p_raw: &[f64],
    states: &[StatePoint],
    thresholds: &[f64],
    vocab: &PhaseVocabulary,
    cfg: &DecodeConfig,
) -> Result<DecodeOutput, DecodeError> {
    let k = vocab.len();
    check(p_raw, k, states.len())?;
    if thresholds.len() != k {
        return Err(DecodeError::Shape(format!("{} thresholds for {k} classes", thresholds.len())));
    }
    let mut p = if cfg.prune {
        prune_pure(p_raw, states, vocab, cfg.generalize_support)?
    } else {
        p_raw.to_vec()
    };
    if cfg.smooth {
        p = smooth_probs(&p, k, states, cfg)?;
    }
    let mut labels = threshold(&p, thresholds)?;
    if cfg.cap {
        labels = gibbs_cap(&labels, &p, states)?;
    }
    let mut fallback = vec![false; states.len()];
    for (n, s) in states.iter().enumerate() {
        let row = &p[n * k..(n + 1) * k];
        let present = s.present();
        if present.count_ones() == 1 {
            // smoothing can reintroduce mass on pruned phases from neighbors
            let admissible = PhaseLabelSet::from_indices(labels[n].iter().filter(|&c| vocab.admissible(c, present)));
            labels[n] = top_labels(admissible, row, 1);
        }
        if labels[n].is_empty() {
            if let Some(c) = argmax_admissible(row, vocab, present) {
                labels[n] = PhaseLabelSet::from_indices([c]);
                fallback[n] = true;
            }
        }
    }
    Ok(DecodeOutput {
        labels,
        probs: p,
        fallback,
    })
}

/// Labels as {0, 1} probabilities, for idempotence checks.
pub fn labels_as_probs(labels: &[PhaseLabelSet], k: usize) -> Vec<f64> {
    labels
        .iter()
        .flat_map(|l| (0..k).map(move |c| if l.contains(c) { 1.0 } else { 0.0 }))
        .collect()
}

/// Samples whose label count exceeds the present-element count, plus pure
/// corners that do not carry exactly one label.
pub fn feasibility_violations(labels: &[PhaseLabelSet], states: &[StatePoint]) -> usize {
    labels
        .iter()
        .zip(states)
        .filter(|(l, s)| {
            let c = present_count(s);
            l.len() > c || (c == 1 && l.len() != 1)
        })
        .count()
}
