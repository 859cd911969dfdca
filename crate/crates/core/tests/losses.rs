use phaseforge::losses::{focal_loss, gpr_loss, pure_loss, smooth_loss, total_loss, LossAux, LossConfig, Penalty};
use phaseforge::neighbors::{build_neighbor_graph, NeighborGraph, NeighborParams};
use proptest::prelude::*;

const K: usize = 5;

fn probs(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..0.99, n * K)
}

fn labels(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop::bool::ANY.prop_map(|b| if b { 1.0 } else { 0.0 }), n * K)
}

fn naive_focal(p: &[f64], y: &[f64], beta: &[f64], gamma: f64) -> f64 {
    let n = p.len() / K;
    let mut s = 0.0;
    for i in 0..n {
        for c in 0..K {
            let pp = if y[i * K + c] == 1.0 { p[i * K + c] } else { 1.0 - p[i * K + c] };
            s += beta[c] * (1.0 - pp).powf(gamma) * pp.ln();
        }
    }
    -s / n as f64
}

fn bce(p: &[f64], y: &[f64]) -> f64 {
    let n = p.len() / K;
    let s: f64 = p.iter().zip(y).map(|(&p, &y)| y * p.ln() + (1.0 - y) * (1.0 - p).ln()).sum();
    -s / n as f64
}

fn central_diff(f: impl Fn(&[f64]) -> f64, p: &[f64], i: usize) -> f64 {
    let h = 1e-6;
    let mut a = p.to_vec();
    let mut b = p.to_vec();
    a[i] += h;
    b[i] -= h;
    (f(&a) - f(&b)) / (2.0 * h)
}

/// Brute-force kNN with ties broken by index, weights from the Gaussian.
fn naive_graph(x: &[Vec<f64>], t: &[f64], k: usize, sx: f64, st: f64) -> Vec<Vec<(usize, f64)>> {
    (0..x.len())
        .map(|i| {
            let mut d: Vec<(f64, usize)> = (0..x.len())
                .filter(|&j| j != i)
                .map(|j| {
                    let dx: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
                    (dx / (sx * sx) + (t[i] - t[j]).powi(2) / (st * st), j)
                })
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d.truncate(k);
            d.into_iter().map(|(d2, j)| (j, (-d2).exp())).collect()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn focal_matches_straight_line_and_bce((p, y, beta) in (1usize..12).prop_flat_map(|n| (probs(n), labels(n), prop::collection::vec(0.1f64..3.0, K))), gamma in 0.0f64..4.0) {
        let (v, g) = focal_loss(&p, &y, K, &beta, gamma).unwrap();
        prop_assert!((v - naive_focal(&p, &y, &beta, gamma)).abs() < 1e-12);
        let (v0, _) = focal_loss(&p, &y, K, &[1.0; K], 0.0).unwrap();
        prop_assert!((v0 - bce(&p, &y)).abs() < 1e-12);
        for i in 0..p.len() {
            let fd = central_diff(|q| naive_focal(q, &y, &beta, gamma), &p, i);
            prop_assert!((g[i] - fd).abs() < 1e-6 * (1.0 + fd.abs()), "i={} g={} fd={}", i, g[i], fd);
        }
    }

    #[test]
    fn gpr_matches_double_loop((p, caps) in (1usize..12).prop_flat_map(|n| (prop::collection::vec(0.0f64..1.0, n * K), prop::collection::vec(1usize..5, n))), gamma in 1.0f64..3.0) {
        let (v, g) = gpr_loss(&p, K, &caps, gamma).unwrap();
        let n = caps.len();
        let mut naive = 0.0;
        for i in 0..n {
            let mut s = 0.0;
            for c in 0..K {
                s += p[i * K + c];
            }
            naive += (s - caps[i] as f64).max(0.0).powf(gamma);
        }
        naive /= n as f64;
        prop_assert!((v - naive).abs() < 1e-12);
        for i in 0..n {
            let s: f64 = p[i * K..(i + 1) * K].iter().sum();
            let excess = s - caps[i] as f64;
            if excess.abs() > 1e-4 {
                let f = |q: &[f64]| gpr_loss(q, K, &caps, gamma).unwrap().0;
                let fd = central_diff(f, &p, i * K);
                prop_assert!((g[i * K] - fd).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn pure_matches_double_loop((p, mask) in (1usize..12).prop_flat_map(|n| (prop::collection::vec(0.0f64..1.0, n * K), prop::collection::vec(prop::bool::ANY, n))), gamma in 1.0f64..3.0) {
        let (v, _) = pure_loss(&p, K, &mask, gamma).unwrap();
        let mut naive = 0.0;
        let mut count = 0;
        for (i, &m) in mask.iter().enumerate() {
            if !m {
                continue;
            }
            count += 1;
            let row = &p[i * K..(i + 1) * K];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            naive += (row.iter().sum::<f64>() - max).max(0.0).powf(gamma);
        }
        let naive = if count == 0 { 0.0 } else { naive / count as f64 };
        prop_assert!((v - naive).abs() < 1e-12);
    }

    #[test]
    fn smooth_matches_quadratic_oracle(
        pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 10..30),
        seed_p in prop::collection::vec(0.0f64..1.0, 30 * K),
        batch_len in 2usize..10,
        delta in 0.0f64..1e-3,
    ) {
        let x: Vec<Vec<f64>> = pts.iter().map(|&(a, _)| vec![a, 1.0 - a]).collect();
        let t: Vec<f64> = pts.iter().map(|&(_, b)| b).collect();
        let refs: Vec<&[f64]> = x.iter().map(|v| v.as_slice()).collect();
        let params = NeighborParams { sigma_x: 0.05, sigma_t: 0.05, k: 8 };
        let ng: NeighborGraph = build_neighbor_graph(&refs, &t, params);
        let brute = naive_graph(&x, &t, 8, 0.05, 0.05);
        for (a, b) in ng.neighbors.iter().zip(&brute) {
            prop_assert_eq!(a.len(), b.len());
            for (u, v) in a.iter().zip(b) {
                prop_assert!((u.1 - v.1).abs() < 1e-12);
            }
        }
        let mut batch: Vec<usize> = (0..batch_len.min(x.len())).map(|i| (i * 7) % x.len()).collect();
        batch.sort_unstable();
        batch.dedup();
        let p = &seed_p[..batch.len() * K];
        let (v, g, flag) = smooth_loss(p, K, &batch, &ng, delta).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for (a, &i) in batch.iter().enumerate() {
            for (b, &j) in batch.iter().enumerate() {
                if let Some(&(_, w)) = ng.neighbors[i].iter().find(|&&(m, _)| m == j) {
                    den += w;
                    for c in 0..K {
                        num += w * (p[a * K + c] - p[b * K + c]).powi(2);
                    }
                }
            }
        }
        if den == 0.0 {
            prop_assert!(flag && v == 0.0 && g.iter().all(|&z| z == 0.0));
        } else {
            prop_assert!(!flag);
            prop_assert!((v - num / (den + delta)).abs() < 1e-12);
            let f = |q: &[f64]| smooth_loss(q, K, &batch, &ng, delta).unwrap().0;
            for i in 0..p.len() {
                let fd = central_diff(f, p, i);
                prop_assert!((g[i] - fd).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }
}

#[test]
fn hand_values() {
    let (v, _) = focal_loss(&[0.5], &[1.0], 1, &[2.0], 2.0).unwrap();
    assert!((v - 0.5 * 2.0f64.ln()).abs() < 1e-15);
    assert!((v - 0.34657).abs() < 1e-5);
    let (v, _) = gpr_loss(&[1.0, 1.0, 1.0, 0.0, 0.0], 5, &[2], 2.0).unwrap();
    assert_eq!(v, 1.0);
    let (v, _) = pure_loss(&[0.9, 0.4, 0.0, 0.0, 0.0], 5, &[true], 2.0).unwrap();
    assert!((v - 0.16).abs() < 1e-15);
    let ng = NeighborGraph {
        k: 1,
        neighbors: vec![vec![(1, 1.0)], vec![]],
    };
    let (v, _, _) = smooth_loss(&[0.5, 0.2, 0.4, 0.2], 2, &[0, 1], &ng, 0.0).unwrap();
    assert!((v - 0.01).abs() < 1e-15);
}

#[test]
fn zero_lambda_total_is_exactly_focal() {
    let p = [0.2, 0.7, 0.9, 0.1, 0.5, 0.5];
    let y = [0.0, 1.0, 1.0, 0.0, 1.0, 0.0];
    let (f, fg) = focal_loss(&p, &y, 3, &[], 2.0).unwrap();
    for q in [Penalty::None, Penalty::Gpr, Penalty::Pure] {
        let cfg = LossConfig { penalty: q, lambda: 0.0, ..LossConfig::default() };
        let aux = LossAux { caps: &[1, 2], pure: &[true, false], batch: &[0, 1], neighbors: None };
        let v = total_loss(&cfg, &p, &y, 3, aux).unwrap();
        assert_eq!(v.total, f);
        assert_eq!(v.grad, fg);
    }
}
