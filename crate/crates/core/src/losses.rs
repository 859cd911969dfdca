//! Class-balanced focal data loss and the physics penalties, each returning
//! its value together with the exact gradient with respect to the
//! probabilities. Probability matrices are row-major `N x K`.

use std::collections::HashMap;

use crate::dataio::{PhaseLabelSet, EPS_ELEMENT};
use crate::neighbors::{NeighborGraph, DEFAULT_K, DEFAULT_SIGMA};

const CLAMP: f64 = 1e-12;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("composition has no element above the presence threshold")]
    EmptyComposition,
    #[error("loss config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    #[default]
    None,
    Gpr,
    Smooth,
    Pure,
}

impl Penalty {
    pub fn parse(s: &str) -> Result<Self, LossError> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "none" => Penalty::None,
            "gpr" => Penalty::Gpr,
            "smooth" => Penalty::Smooth,
            "pure" => Penalty::Pure,
            other => return Err(LossError::Config(format!("unknown penalty {other:?}"))),
        })
    }

    /// Resolves a list of requested penalties; training uses one at a time.
    pub fn from_requested(names: &[&str]) -> Result<Self, LossError> {
        let active: Vec<Penalty> = names
            .iter()
            .map(|n| Penalty::parse(n))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .filter(|p| *p != Penalty::None)
            .collect();
        match active.as_slice() {
            [] => Ok(Penalty::None),
            [p] => Ok(*p),
            _ => Err(LossError::Config(
                "only one physics penalty may be active per training run".into(),
            )),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Penalty::None => "none",
            Penalty::Gpr => "gpr",
            Penalty::Smooth => "smooth",
            Penalty::Pure => "pure",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// Per-class weights; empty means all ones.
    pub beta: Vec<f64>,
    pub gamma_focal: f64,
    pub penalty: Penalty,
    pub lambda: f64,
    pub gamma_gpr: f64,
    pub gamma_pure: f64,
    pub sigma_x: f64,
    pub sigma_t: f64,
    pub k_nn: usize,
    pub delta: f64,
    pub eps_element: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta: Vec::new(),
            gamma_focal: 2.0,
            penalty: Penalty::None,
            lambda: 0.0,
            gamma_gpr: 2.0,
            gamma_pure: 2.0,
            sigma_x: DEFAULT_SIGMA,
            sigma_t: DEFAULT_SIGMA,
            k_nn: DEFAULT_K,
            delta: 1e-8,
            eps_element: EPS_ELEMENT,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        let bad = |m: &str| Err(LossError::Config(m.to_string()));
        if self.beta.iter().any(|&b| !(b > 0.0 && b.is_finite())) {
            return bad("class weights must be positive");
        }
        if !(self.gamma_focal >= 0.0) {
            return bad("focal exponent must be non-negative");
        }
        if !(self.gamma_gpr >= 1.0 && self.gamma_pure >= 1.0) {
            return bad("penalty exponents must be at least 1");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("penalty weight must be non-negative");
        }
        if !(self.sigma_x > 0.0 && self.sigma_t > 0.0 && self.delta >= 0.0) || self.k_nn == 0 {
            return bad("neighborhood parameters must be positive");
        }
        Ok(())
    }
}

/// Inverse positive frequency per class, renormalized to mean 1.
pub fn default_beta(labels: &[PhaseLabelSet], k: usize) -> Vec<f64> {
    let n = labels.len() as f64;
    let raw: Vec<f64> = (0..k)
        .map(|c| {
            let pos = labels.iter().filter(|l| l.contains(c)).count();
            n / (k as f64 * pos.max(1) as f64)
        })
        .collect();
    let mean = raw.iter().sum::<f64>() / k as f64;
    if mean > 0.0 {
        raw.iter().map(|b| b / mean).collect()
    } else {
        vec![1.0; k]
    }
}

fn check(p: &[f64], y: &[f64], k: usize) -> Result<usize, LossError> {
    if k == 0 || p.len() % k != 0 || p.len() != y.len() {
        return Err(LossError::Shape(format!(
            "{} probabilities and {} labels for {k} classes",
            p.len(),
            y.len()
        )));
    }
    Ok(p.len() / k)
}

/// `-(1/N) sum_n sum_k β_k (1 - p')^γ log p'` with `p' = p` for positives and
/// `1 - p` for negatives, clamped to `[1e-12, 1 - 1e-12]`.
pub fn focal_loss(p: &[f64], y: &[f64], k: usize, beta: &[f64], gamma: f64) -> Result<(f64, Vec<f64>), LossError> {
    let n = check(p, y, k)?;
    if !beta.is_empty() && beta.len() != k {
        return Err(LossError::Shape(format!("{} class weights for {k} classes", beta.len())));
    }
    let mut grad = vec![0.0; p.len()];
    if n == 0 {
        return Ok((0.0, grad));
    }
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    for (idx, (&pv, &yv)) in p.iter().zip(y).enumerate() {
        let b = if beta.is_empty() { 1.0 } else { beta[idx % k] };
        let (raw, sign) = if yv > 0.5 { (pv, 1.0) } else { (1.0 - pv, -1.0) };
        let c = raw.clamp(CLAMP, 1.0 - CLAMP);
        let lc = c.ln();
        let q = 1.0 - c;
        let w = if gamma == 0.0 { 1.0 } else { q.powf(gamma) };
        total += -b * w * lc;
        if raw > CLAMP && raw < 1.0 - CLAMP {
            let dw = if gamma == 0.0 { 0.0 } else { -gamma * q.powf(gamma - 1.0) };
            let dc = -b * (dw * lc + w / c);
            grad[idx] = dc * sign * inv_n;
        }
    }
    Ok((total * inv_n, grad))
}

/// Number of elements above `eps`.
pub fn count_elements(x: &[f64], eps: f64) -> Result<usize, LossError> {
    match x.iter().filter(|&&v| v > eps).count() {
        0 => Err(LossError::EmptyComposition),
        c => Ok(c),
    }
}

/// `(1/|B|) sum_n max(0, S_n - C_n)^γ` with `S_n = sum_k p_nk`.
pub fn gpr_loss(p: &[f64], k: usize, caps: &[usize], gamma: f64) -> Result<(f64, Vec<f64>), LossError> {
    if k == 0 || p.len() != caps.len() * k {
        return Err(LossError::Shape("caps do not match the batch".into()));
    }
    let n = caps.len();
    let mut grad = vec![0.0; p.len()];
    if n == 0 {
        return Ok((0.0, grad));
    }
    let mut total = 0.0;
    for (i, row) in p.chunks_exact(k).enumerate() {
        let excess = row.iter().sum::<f64>() - caps[i] as f64;
        if excess > 0.0 {
            total += excess.powf(gamma);
            let g = gamma * excess.powf(gamma - 1.0) / n as f64;
            grad[i * k..(i + 1) * k].iter_mut().for_each(|v| *v = g);
        }
    }
    Ok((total / n as f64, grad))
}

/// In-batch neighborhood smoothness:
/// `sum ω_nm ‖p_n - p_m‖² / (sum ω_nm + δ)` over ordered pairs `(n, m)` with
/// both in the batch and `m` among the precomputed neighbors of `n`.
/// `batch` maps batch rows to indices of `ng`. The flag is set when no pair
/// qualifies.
pub fn smooth_loss(
    p: &[f64],
    k: usize,
    batch: &[usize],
    ng: &NeighborGraph,
    delta: f64,
) -> Result<(f64, Vec<f64>, bool), LossError> {
    if k == 0 || p.len() != batch.len() * k {
        return Err(LossError::Shape("batch indices do not match the probabilities".into()));
    }
    if let Some(&bad) = batch.iter().find(|&&i| i >= ng.len()) {
        return Err(LossError::Shape(format!("sample {bad} is not in the neighbor graph")));
    }
    let pos: HashMap<usize, usize> = batch.iter().enumerate().map(|(r, &i)| (i, r)).collect();
    let mut pairs = Vec::new();
    for (a, &i) in batch.iter().enumerate() {
        for &(j, w) in &ng.neighbors[i] {
            if let Some(&b) = pos.get(&j) {
                pairs.push((a, b, w));
            }
        }
    }
    let mut grad = vec![0.0; p.len()];
    if pairs.is_empty() {
        return Ok((0.0, grad, true));
    }
    let denom = pairs.iter().map(|&(_, _, w)| w).sum::<f64>() + delta;
    let mut num = 0.0;
    for &(a, b, w) in &pairs {
        for c in 0..k {
            let d = p[a * k + c] - p[b * k + c];
            num += w * d * d;
            let g = 2.0 * w * d / denom;
            grad[a * k + c] += g;
            grad[b * k + c] -= g;
        }
    }
    Ok((num / denom, grad, false))
}

/// `(1/|P|) sum_{n in P} max(0, S_n - M_n)^γ` over the masked (pure-corner)
/// rows, `M_n = max_k p_nk` with ties to the lowest index.
pub fn pure_loss(p: &[f64], k: usize, pure: &[bool], gamma: f64) -> Result<(f64, Vec<f64>), LossError> {
    if k == 0 || p.len() != pure.len() * k {
        return Err(LossError::Shape("pure mask does not match the batch".into()));
    }
    let mut grad = vec![0.0; p.len()];
    let count = pure.iter().filter(|&&b| b).count();
    if count == 0 {
        return Ok((0.0, grad));
    }
    let mut total = 0.0;
    for (i, row) in p.chunks_exact(k).enumerate() {
        if !pure[i] {
            continue;
        }
        let mut arg = 0;
        for c in 1..k {
            if row[c] > row[arg] {
                arg = c;
            }
        }
        let excess = row.iter().sum::<f64>() - row[arg];
        if excess > 0.0 {
            total += excess.powf(gamma);
            let g = gamma * excess.powf(gamma - 1.0) / count as f64;
            for c in 0..k {
                if c != arg {
                    grad[i * k + c] = g;
                }
            }
        }
    }
    Ok((total / count as f64, grad))
}

/// Per-batch side information the penalties need.
#[derive(Debug, Clone, Copy)]
pub struct LossAux<'a> {
    /// Present-element counts per row.
    pub caps: &'a [usize],
    /// Whether each row is a pure corner.
    pub pure: &'a [bool],
    /// Row positions in the neighbor graph.
    pub batch: &'a [usize],
    pub neighbors: Option<&'a NeighborGraph>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub data: f64,
    pub penalty: f64,
    pub grad: Vec<f64>,
    /// Smoothing found no in-batch neighbor pair.
    pub no_pairs: bool,
}

/// `L_data + λ L_q` for the single configured penalty.
pub fn total_loss(cfg: &LossConfig, p: &[f64], y: &[f64], k: usize, aux: LossAux<'_>) -> Result<LossValue, LossError> {
    let (data, mut grad) = focal_loss(p, y, k, &cfg.beta, cfg.gamma_focal)?;
    let mut no_pairs = false;
    let (pen, pgrad) = match cfg.penalty {
        Penalty::None => (0.0, None),
        Penalty::Gpr => {
            let (v, g) = gpr_loss(p, k, aux.caps, cfg.gamma_gpr)?;
            (v, Some(g))
        }
        Penalty::Pure => {
            let (v, g) = pure_loss(p, k, aux.pure, cfg.gamma_pure)?;
            (v, Some(g))
        }
        Penalty::Smooth => {
            let ng = aux
                .neighbors
                .ok_or_else(|| LossError::Config("smoothing needs a neighbor graph".into()))?;
            let (v, g, flag) = smooth_loss(p, k, aux.batch, ng, cfg.delta)?;
            no_pairs = flag;
            (v, Some(g))
        }
    };
    if let Some(g) = pgrad {
        if cfg.lambda != 0.0 {
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += cfg.lambda * b;
            }
        }
    }
    Ok(LossValue {
        total: data + cfg.lambda * pen,
        data,
        penalty: pen,
        grad,
        no_pairs,
    })
}
