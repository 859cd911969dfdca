//! GATv2 element-graph network with hand-derived reverse-mode gradients.
//!
//! Each attention layer projects node embeddings with a shared `W`, scores
//! edges as `e_ij = a^T LeakyReLU(W h_i + W h_j)`, normalizes them over the
//! neighbors of `i`, aggregates `sum_j α_ij W h_j + b` per head, concatenates
//! the heads and applies ELU. The final embeddings are mean-pooled, joined
//! with the normalized temperature and mapped by a one-hidden-layer MLP to
//! per-phase logits.

mod checkpoint;
mod net;
mod params;

pub use checkpoint::{from_bytes, load as load_checkpoint, save as save_checkpoint, to_bytes};
pub use net::{
    attention_scores, backward, backward_acc, forward, layer_forward, sigmoid, ForwardTrace,
    LayerTrace, Mode, NoRng, LEAKY_SLOPE,
};
pub use params::{Activation, Layout, ModelConfig, ModelParams, TensorSpec};

use crate::elemgraph::ElementGraph;

#[derive(Debug, thiserror::Error)]
pub enum GatError {
    #[error("non-finite activations at layer {layer}")]
    NonFinite { layer: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("model config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Deterministic inference: dropout off, probabilities only.
pub fn predict(params: &ModelParams, graph: &ElementGraph) -> Result<Vec<f64>, GatError> {
    Ok(forward(params, graph, Mode::<NoRng>::Eval, 0.0)?.probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{StatePoint, TRange};
    use crate::elemgraph::{build_graph, D_IN, N_PROPERTIES};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            d_in: D_IN,
            layers: 1,
            heads: 2,
            d_head: 3,
            mlp_hidden: 5,
            n_out: 4,
            node_activation: Activation::Elu,
        }
    }

    fn random_graph(seed: u64, self_loops: bool) -> ElementGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<[f64; N_PROPERTIES]> = (0..4)
            .map(|_| std::array::from_fn(|_| rng.gen_range(-1.5..1.5)))
            .collect();
        let mut x: Vec<f64> = (0..4).map(|_| rng.gen_range(0.05..1.0)).collect();
        let s: f64 = x.iter().sum();
        x.iter_mut().for_each(|v| *v /= s);
        build_graph(
            &StatePoint::new(x, rng.gen_range(0.0..1.0)),
            &z,
            TRange { min: 0.0, max: 1.0 },
            self_loops,
        )
        .unwrap()
    }

    /// Spread parameters so that biases and attention are not trivially zero.
    fn randomized(cfg: ModelConfig, seed: u64) -> ModelParams {
        let mut p = ModelParams::init(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for v in &mut p.data {
            *v += rng.gen_range(-0.3..0.3);
        }
        p
    }

    /// Straight-line single-layer reference: explicit per-head loops with no
    /// shared helpers.
    fn naive_layer(p: &ModelParams, g: &ElementGraph) -> Vec<f64> {
        let c = &p.cfg;
        let w = p.tensor("gat0.w").unwrap();
        let att = p.tensor("gat0.att").unwrap();
        let bias = p.tensor("gat0.bias").unwrap();
        let f = c.embed();
        let n = g.n_nodes;
        let wh = |i: usize, h: usize, c2: usize| -> f64 {
            (0..c.d_in).map(|q| g.x[i * c.d_in + q] * w[q * f + h * c.d_head + c2]).sum()
        };
        let mut out = vec![0.0; n * f];
        for h in 0..c.heads {
            for i in 0..n {
                let nbrs: Vec<usize> = g.edges.iter().filter(|e| e.0 == i).map(|e| e.1).collect();
                let mut e = Vec::new();
                for &j in &nbrs {
                    let mut s = 0.0;
                    for c2 in 0..c.d_head {
                        let v = wh(i, h, c2) + wh(j, h, c2);
                        s += att[h * c.d_head + c2] * if v > 0.0 { v } else { 0.2 * v };
                    }
                    e.push(s);
                }
                let m = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = e.iter().map(|v| (v - m).exp()).sum();
                for c2 in 0..c.d_head {
                    let mut acc = bias[h * c.d_head + c2];
                    for (k, &j) in nbrs.iter().enumerate() {
                        acc += (e[k] - m).exp() / z * wh(j, h, c2);
                    }
                    out[i * f + h * c.d_head + c2] = if acc > 0.0 { acc } else { acc.exp() - 1.0 };
                }
            }
        }
        out
    }

    #[test]
    fn layer_matches_straight_line_reference() {
        let cfg = ModelConfig {
            layers: 1,
            ..ModelConfig::default()
        };
        for seed in 0..3 {
            let p = randomized(cfg, seed);
            let g = random_graph(seed, true);
            let (h, alpha) = layer_forward(&p, 0, &g.x, &g).unwrap();
            let r = naive_layer(&p, &g);
            let diff = h.iter().zip(&r).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-10, "max diff {diff}");
            for row in alpha.chunks(4) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hand_evaluated_scores_on_two_nodes() {
        // one head, d_head = 2, inputs of width 2
        let cfg = ModelConfig {
            d_in: 2,
            layers: 1,
            heads: 1,
            d_head: 2,
            mlp_hidden: 1,
            n_out: 1,
            node_activation: Activation::Identity,
        };
        let mut p = ModelParams::zeros(cfg).unwrap();
        p.tensor_mut("gat0.w").unwrap().copy_from_slice(&[1.0, 2.0, -1.0, 0.5]);
        p.tensor_mut("gat0.att").unwrap().copy_from_slice(&[0.3, -0.2]);
        let g = ElementGraph {
            n_nodes: 2,
            x: vec![1.0, 0.0, 0.5, 2.0],
            edges: vec![(0, 0), (0, 1), (1, 0), (1, 1)],
            t_norm: 0.0,
            t_clamped: false,
        };
        // W h_0 = (1, 2); W h_1 = (0.5 - 2, 1 + 1) = (-1.5, 2)
        let e = attention_scores(&p, 0, &g.x, &g).unwrap();
        // e_00: LeakyReLU(2, 4) = (2, 4) -> 0.6 - 0.8
        assert!((e[0] - (-0.2)).abs() < 1e-12, "{}", e[0]);
        // e_01 = e_10: LeakyReLU(-0.5, 4) = (-0.1, 4) -> -0.03 - 0.8
        assert!((e[1] - (-0.83)).abs() < 1e-12, "{}", e[1]);
        assert!((e[2] - (-0.83)).abs() < 1e-12, "{}", e[2]);
        // e_11: LeakyReLU(-3, 4) = (-0.6, 4) -> -0.18 - 0.8
        assert!((e[3] - (-0.98)).abs() < 1e-12, "{}", e[3]);
    }

    #[test]
    fn zero_attention_averages_neighbors() {
        let cfg = ModelConfig {
            d_in: D_IN,
            layers: 1,
            heads: 1,
            d_head: D_IN,
            mlp_hidden: 1,
            n_out: 1,
            node_activation: Activation::Identity,
        };
        let mut p = ModelParams::zeros(cfg).unwrap();
        let w = p.tensor_mut("gat0.w").unwrap();
        for i in 0..D_IN {
            w[i * D_IN + i] = 1.0;
        }
        let g = random_graph(4, true);
        let (h, _) = layer_forward(&p, 0, &g.x, &g).unwrap();
        for c in 0..D_IN {
            let mean: f64 = (0..4).map(|j| g.x[j * D_IN + c]).sum::<f64>() / 4.0;
            for i in 0..4 {
                assert!((h[i * D_IN + c] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_params_give_one_half() {
        let p = ModelParams::zeros(ModelConfig::default()).unwrap();
        let probs = predict(&p, &random_graph(1, true)).unwrap();
        assert!(probs.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn eval_is_deterministic_and_in_range() {
        let p = ModelParams::init(ModelConfig::default(), 11).unwrap();
        let g = random_graph(2, true);
        let a = predict(&p, &g).unwrap();
        assert_eq!(a, predict(&p, &g).unwrap());
        assert!(a.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn zero_upstream_gradient_is_zero() {
        let p = randomized(tiny_cfg(), 1);
        let t = forward(&p, &random_graph(1, true), Mode::<NoRng>::Eval, 0.0).unwrap();
        let g = backward(&p, &t, &[0.0; 4]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn finite_differences_match_tiny_model() {
        for seed in 0..3 {
            let p = randomized(tiny_cfg(), seed);
            let g = random_graph(seed + 10, true);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = forward(&p, &g, Mode::Train(&mut rng), 0.3).unwrap();
            let up: Vec<f64> = (0..4).map(|k| 0.5 - k as f64 * 0.3).collect();
            let grad = backward(&p, &t, &up).unwrap();
            let objective = |q: &ModelParams| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                let t = forward(q, &g, Mode::Train(&mut r), 0.3).unwrap();
                t.logits.iter().zip(&up).map(|(a, b)| a * b).sum::<f64>()
            };
            let h = 1e-5;
            for i in 0..p.data.len() {
                let mut q = p.clone();
                q.data[i] += h;
                let fp = objective(&q);
                q.data[i] -= 2.0 * h;
                let fm = objective(&q);
                let fd = (fp - fm) / (2.0 * h);
                let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
                assert!(rel < 1e-4, "param {i}: fd {fd} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn dropout_expectation_matches_eval() {
        let p = randomized(tiny_cfg(), 5);
        let g = random_graph(5, true);
        let eval = forward(&p, &g, Mode::<NoRng>::Eval, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 20_000;
        let hid = p.cfg.mlp_hidden;
        let mut sum = vec![0.0; hid];
        let mut sq = vec![0.0; hid];
        for _ in 0..n {
            let t = forward(&p, &g, Mode::Train(&mut rng), 0.3).unwrap();
            for k in 0..hid {
                sum[k] += t.hidden_out[k];
                sq[k] += t.hidden_out[k] * t.hidden_out[k];
            }
        }
        for k in 0..hid {
            let mean = sum[k] / n as f64;
            let var = (sq[k] / n as f64 - mean * mean).max(0.0);
            let se = (var / n as f64).sqrt();
            assert!((mean - eval.hidden_out[k]).abs() <= 3.0 * se + 1e-12, "unit {k}");
        }
    }

    #[test]
    fn no_self_loops_excludes_diagonal() {
        let p = randomized(ModelConfig::default(), 2);
        let g = random_graph(3, false);
        let (_, alpha) = layer_forward(&p, 0, &g.x, &g).unwrap();
        for h in 0..4 {
            for i in 0..4 {
                assert_eq!(alpha[(h * 4 + i) * 4 + i], 0.0);
            }
        }
    }

    #[test]
    fn non_finite_input_names_layer() {
        let p = ModelParams::init(tiny_cfg(), 0).unwrap();
        let mut g = random_graph(0, true);
        g.x[3] = f64::NAN;
        assert!(matches!(predict(&p, &g), Err(GatError::NonFinite { layer: 0 })));
    }
}
