use rand::Rng;

use super::params::{Activation, ModelParams};
use super::GatError;
use crate::elemgraph::ElementGraph;

pub const LEAKY_SLOPE: f64 = 0.2;

pub enum Mode<'a, R: Rng> {
    Eval,
    /// Dropout active, masks drawn from the given stream.
    Train(&'a mut R),
}

/// Placeholder stream type for `Mode::Eval` call sites.
pub type NoRng = rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    /// `n x d_in` layer input.
    pub h_in: Vec<f64>,
    /// `n x F` projected features `W h`.
    pub z: Vec<f64>,
    /// `H x n x n` unnormalized scores; non-edges hold `-inf`.
    pub e: Vec<f64>,
    /// `H x n x n` attention weights, zero off the edge set.
    pub alpha: Vec<f64>,
    /// `n x F` aggregated pre-activation output.
    pub pre: Vec<f64>,
    /// `n x F` activated output.
    pub h_out: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub n_nodes: usize,
    pub layers: Vec<LayerTrace>,
    pub pooled: Vec<f64>,
    /// `[pooled ; T_norm]`.
    pub mlp_in: Vec<f64>,
    pub hidden_pre: Vec<f64>,
    /// Per-unit dropout scale: 0 or 1/(1-p) in train mode, 1 in eval mode.
    pub dropout_scale: Vec<f64>,
    pub hidden_out: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

#[inline]
fn leaky(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

#[inline]
fn leaky_grad(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

#[inline]
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// `out (m x n) = a (m x k) * b (k x n)`.
fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av != 0.0 {
                axpy(av, &b[p * n..(p + 1) * n], row);
            }
        }
    }
}

fn check_finite(v: &[f64], layer: usize) -> Result<(), GatError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(GatError::NonFinite { layer })
    }
}

/// Per-head scores `e_ij = a^T LeakyReLU(W h_i + W h_j)` from projected
/// features `z`, laid out `H x n x n` with `-inf` off the edge set.
fn scores(params: &ModelParams, l: usize, z: &[f64], n: usize, adj: &[bool]) -> Vec<f64> {
    let cfg = &params.cfg;
    let (hh, dh, f) = (cfg.heads, cfg.d_head, cfg.embed());
    let att = &params.data[params.layout.layers[l].att..][..hh * dh];
    let mut e = vec![f64::NEG_INFINITY; hh * n * n];
    for h in 0..hh {
        let a = &att[h * dh..(h + 1) * dh];
        for i in 0..n {
            let zi = &z[i * f + h * dh..i * f + (h + 1) * dh];
            for j in 0..n {
                if adj[i * n + j] {
                    let zj = &z[j * f + h * dh..j * f + (h + 1) * dh];
                    e[(h * n + i) * n + j] = (0..dh).map(|c| a[c] * leaky(zi[c] + zj[c])).sum();
                }
            }
        }
    }
    e
}

fn layer_forward_traced(
    params: &ModelParams,
    l: usize,
    h_in: &[f64],
    n: usize,
    adj: &[bool],
) -> Result<LayerTrace, GatError> {
    let cfg = &params.cfg;
    let (hh, dh, f) = (cfg.heads, cfg.d_head, cfg.embed());
    let din = cfg.layer_in(l);
    if h_in.len() != n * din {
        return Err(GatError::Shape(format!(
            "layer {l} expects {n}x{din} input, got {} values",
            h_in.len()
        )));
    }
    check_finite(h_in, l)?;
    let off = params.layout.layers[l];
    let w = &params.data[off.w..off.w + din * f];
    let bias = &params.data[off.bias..off.bias + f];
    let mut z = vec![0.0; n * f];
    matmul(h_in, w, n, din, f, &mut z);
    let e = scores(params, l, &z, n, adj);
    let mut alpha = vec![0.0; hh * n * n];
    for h in 0..hh {
        for i in 0..n {
            let row = &e[(h * n + i) * n..(h * n + i + 1) * n];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if m == f64::NEG_INFINITY {
                continue;
            }
            let out = &mut alpha[(h * n + i) * n..(h * n + i + 1) * n];
            let mut s = 0.0;
            for (o, &v) in out.iter_mut().zip(row) {
                *o = if v == f64::NEG_INFINITY { 0.0 } else { (v - m).exp() };
                s += *o;
            }
            out.iter_mut().for_each(|o| *o /= s);
        }
    }
    let mut pre = vec![0.0; n * f];
    for i in 0..n {
        let row = &mut pre[i * f..(i + 1) * f];
        row.copy_from_slice(bias);
        for h in 0..hh {
            let seg = &mut row[h * dh..(h + 1) * dh];
            for j in 0..n {
                let a = alpha[(h * n + i) * n + j];
                if a != 0.0 {
                    axpy(a, &z[j * f + h * dh..j * f + (h + 1) * dh], seg);
                }
            }
        }
    }
    let h_out: Vec<f64> = match cfg.node_activation {
        Activation::Elu => pre.iter().map(|&v| if v > 0.0 { v } else { v.exp_m1() }).collect(),
        Activation::Identity => pre.clone(),
    };
    check_finite(&h_out, l)?;
    Ok(LayerTrace {
        h_in: h_in.to_vec(),
        z,
        e,
        alpha,
        pre,
        h_out,
    })
}

/// Unnormalized per-head edge scores of layer `l`, `H x n x n`.
pub fn attention_scores(
    params: &ModelParams,
    l: usize,
    h: &[f64],
    graph: &ElementGraph,
) -> Result<Vec<f64>, GatError> {
    Ok(layer_forward_traced(params, l, h, graph.n_nodes, &graph.adjacency())?.e)
}

/// One attention layer applied to node embeddings `h` (`n x d_in`).
pub fn layer_forward(
    params: &ModelParams,
    l: usize,
    h: &[f64],
    graph: &ElementGraph,
) -> Result<(Vec<f64>, Vec<f64>), GatError> {
    let t = layer_forward_traced(params, l, h, graph.n_nodes, &graph.adjacency())?;
    Ok((t.h_out, t.alpha))
}

/// Full network: attention layers, mean pooling, `[g; T]`, MLP, sigmoid.
pub fn forward<R: Rng>(
    params: &ModelParams,
    graph: &ElementGraph,
    mode: Mode<'_, R>,
    dropout: f64,
) -> Result<ForwardTrace, GatError> {
    let cfg = &params.cfg;
    let n = graph.n_nodes;
    if graph.x.len() != n * cfg.d_in {
        return Err(GatError::Shape(format!(
            "graph has {} features per node, model expects {}",
            graph.x.len() / n.max(1),
            cfg.d_in
        )));
    }
    let adj = graph.adjacency();
    let mut layers = Vec::with_capacity(cfg.layers);
    let mut h = graph.x.clone();
    for l in 0..cfg.layers {
        let t = layer_forward_traced(params, l, &h, n, &adj)?;
        h = t.h_out.clone();
        layers.push(t);
    }
    let f = cfg.embed();
    let mut pooled = vec![0.0; f];
    for i in 0..n {
        axpy(1.0 / n as f64, &h[i * f..(i + 1) * f], &mut pooled);
    }
    let mut mlp_in = pooled.clone();
    mlp_in.push(graph.t_norm);
    let m = params.layout.mlp;
    let hid = cfg.mlp_hidden;
    let k = cfg.n_out;
    let w1 = &params.data[m.w1..m.w1 + (f + 1) * hid];
    let mut hidden_pre = params.data[m.b1..m.b1 + hid].to_vec();
    for (p, &u) in mlp_in.iter().enumerate() {
        if u != 0.0 {
            axpy(u, &w1[p * hid..(p + 1) * hid], &mut hidden_pre);
        }
    }
    let dropout_scale: Vec<f64> = match mode {
        Mode::Eval => vec![1.0; hid],
        Mode::Train(rng) => {
            if dropout <= 0.0 {
                vec![1.0; hid]
            } else {
                let keep = 1.0 / (1.0 - dropout);
                (0..hid)
                    .map(|_| if rng.gen::<f64>() < dropout { 0.0 } else { keep })
                    .collect()
            }
        }
    };
    let hidden_out: Vec<f64> = hidden_pre
        .iter()
        .zip(&dropout_scale)
        .map(|(&v, &s)| v.max(0.0) * s)
        .collect();
    let w2 = &params.data[m.w2..m.w2 + hid * k];
    let mut logits = params.data[m.b2..m.b2 + k].to_vec();
    for (p, &v) in hidden_out.iter().enumerate() {
        if v != 0.0 {
            axpy(v, &w2[p * k..(p + 1) * k], &mut logits);
        }
    }
    check_finite(&logits, cfg.layers)?;
    let probs = logits.iter().map(|&o| sigmoid(o)).collect();
    Ok(ForwardTrace {
        n_nodes: n,
        layers,
        pooled,
        mlp_in,
        hidden_pre,
        dropout_scale,
        hidden_out,
        logits,
        probs,
    })
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Accumulates `d(logits . grad_logits)/d(params)` into `grad`.
pub fn backward_acc(
    params: &ModelParams,
    trace: &ForwardTrace,
    grad_logits: &[f64],
    grad: &mut [f64],
) -> Result<(), GatError> {
    let cfg = &params.cfg;
    let (f, hid, k, n) = (cfg.embed(), cfg.mlp_hidden, cfg.n_out, trace.n_nodes);
    if grad_logits.len() != k || grad.len() != params.data.len() || trace.layers.len() != cfg.layers {
        return Err(GatError::Shape("trace, gradient and parameters disagree".into()));
    }
    if trace.hidden_pre.len() != hid || trace.mlp_in.len() != f + 1 {
        return Err(GatError::Shape("trace was produced by a different model".into()));
    }
    let m = params.layout.mlp;
    // output layer
    for (p, &v) in trace.hidden_out.iter().enumerate() {
        if v != 0.0 {
            axpy(v, grad_logits, &mut grad[m.w2 + p * k..m.w2 + (p + 1) * k]);
        }
    }
    axpy(1.0, grad_logits, &mut grad[m.b2..m.b2 + k]);
    let w2 = &params.data[m.w2..m.w2 + hid * k];
    let mut d_pre = vec![0.0; hid];
    for p in 0..hid {
        if trace.hidden_pre[p] > 0.0 && trace.dropout_scale[p] != 0.0 {
            d_pre[p] = dot(&w2[p * k..(p + 1) * k], grad_logits) * trace.dropout_scale[p];
        }
    }
    // hidden layer
    for (p, &u) in trace.mlp_in.iter().enumerate() {
        if u != 0.0 {
            axpy(u, &d_pre, &mut grad[m.w1 + p * hid..m.w1 + (p + 1) * hid]);
        }
    }
    axpy(1.0, &d_pre, &mut grad[m.b1..m.b1 + hid]);
    let w1 = &params.data[m.w1..m.w1 + (f + 1) * hid];
    let d_pool: Vec<f64> = (0..f).map(|p| dot(&w1[p * hid..(p + 1) * hid], &d_pre)).collect();
    // mean pooling sends 1/n to every node
    let mut d_h = vec![0.0; n * f];
    for i in 0..n {
        axpy(1.0 / n as f64, &d_pool, &mut d_h[i * f..(i + 1) * f]);
    }
    for l in (0..cfg.layers).rev() {
        d_h = layer_backward(params, l, &trace.layers[l], &d_h, n, grad, l > 0);
    }
    Ok(())
}

fn layer_backward(
    params: &ModelParams,
    l: usize,
    t: &LayerTrace,
    d_out: &[f64],
    n: usize,
    grad: &mut [f64],
    need_input_grad: bool,
) -> Vec<f64> {
    let cfg = &params.cfg;
    let (hh, dh, f) = (cfg.heads, cfg.d_head, cfg.embed());
    let din = cfg.layer_in(l);
    let off = params.layout.layers[l];
    let d_pre: Vec<f64> = match cfg.node_activation {
        Activation::Elu => d_out
            .iter()
            .zip(&t.pre)
            .zip(&t.h_out)
            .map(|((&g, &p), &o)| if p > 0.0 { g } else { g * (o + 1.0) })
            .collect(),
        Activation::Identity => d_out.to_vec(),
    };
    for i in 0..n {
        axpy(1.0, &d_pre[i * f..(i + 1) * f], &mut grad[off.bias..off.bias + f]);
    }
    let att = &params.data[off.att..off.att + hh * dh];
    let mut d_z = vec![0.0; n * f];
    let mut d_e = vec![0.0; n * n];
    let mut d_alpha = vec![0.0; n];
    for h in 0..hh {
        // value path and attention weights
        for i in 0..n {
            let dp = &d_pre[i * f + h * dh..i * f + (h + 1) * dh];
            let arow = &t.alpha[(h * n + i) * n..(h * n + i + 1) * n];
            for j in 0..n {
                d_alpha[j] = 0.0;
                if arow[j] != 0.0 {
                    let zj = &t.z[j * f + h * dh..j * f + (h + 1) * dh];
                    d_alpha[j] = dot(dp, zj);
                    axpy(arow[j], dp, &mut d_z[j * f + h * dh..j * f + (h + 1) * dh]);
                }
            }
            let s: f64 = arow.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
            for j in 0..n {
                d_e[i * n + j] = arow[j] * (d_alpha[j] - s);
            }
        }
        let a = &att[h * dh..(h + 1) * dh];
        let ga = off.att + h * dh;
        for i in 0..n {
            for j in 0..n {
                let de = d_e[i * n + j];
                if de == 0.0 {
                    continue;
                }
                for c in 0..dh {
                    let u = t.z[i * f + h * dh + c] + t.z[j * f + h * dh + c];
                    grad[ga + c] += de * leaky(u);
                    let du = de * a[c] * leaky_grad(u);
                    d_z[i * f + h * dh + c] += du;
                    d_z[j * f + h * dh + c] += du;
                }
            }
        }
    }
    // z = h_in W
    for i in 0..n {
        for p in 0..din {
            let hv = t.h_in[i * din + p];
            if hv != 0.0 {
                axpy(hv, &d_z[i * f..(i + 1) * f], &mut grad[off.w + p * f..off.w + (p + 1) * f]);
            }
        }
    }
    if !need_input_grad {
        return Vec::new();
    }
    let w = &params.data[off.w..off.w + din * f];
    let mut d_in = vec![0.0; n * din];
    for i in 0..n {
        for p in 0..din {
            d_in[i * din + p] = dot(&d_z[i * f..(i + 1) * f], &w[p * f..(p + 1) * f]);
        }
    }
    d_in
}

/// Gradient of `logits . grad_logits` as a fresh vector.
pub fn backward(params: &ModelParams, trace: &ForwardTrace, grad_logits: &[f64]) -> Result<Vec<f64>, GatError> {
    let mut g = vec![0.0; params.data.len()];
    backward_acc(params, trace, grad_logits, &mut g)?;
    Ok(g)
}
