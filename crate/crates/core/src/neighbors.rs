//! k-nearest-neighbor graph in scaled (composition, normalized T) space with
//! Gaussian weights `ω = exp(-‖Δx‖²/σ_x² - ΔT²/σ_T²)`.
//!
//! Neighbors are ordered by (distance, index), so ties resolve to the lower
//! sample index and the graph is deterministic.

/// Shared defaults for training penalties and inference smoothing.
pub const DEFAULT_SIGMA: f64 = 0.05;
pub const DEFAULT_K: usize = 8;

const LEAF: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    pub k: usize,
    /// Per point: `(neighbor index, ω)` in ascending distance order.
    pub neighbors: Vec<Vec<(usize, f64)>>,
}

impl NeighborGraph {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Static kd-tree over row-major points.
#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    coords: Vec<f64>,
    order: Vec<usize>,
    /// `coords` permuted into `order`, so leaf scans are contiguous.
    sorted: Vec<f64>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn new(coords: Vec<f64>, dim: usize) -> Self {
        assert!(dim > 0 && coords.len() % dim == 0);
        let n = coords.len() / dim;
        let mut tree = Self {
            dim,
            coords,
            order: (0..n).collect(),
            sorted: Vec::new(),
            nodes: Vec::new(),
        };
        if n > 0 {
            tree.build(0, n);
        }
        let mut sorted = Vec::with_capacity(tree.coords.len());
        for &i in &tree.order {
            sorted.extend_from_slice(&tree.coords[i * dim..(i + 1) * dim]);
        }
        tree.sorted = sorted;
        tree
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Point indices in leaf order; nearby points are adjacent.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        // split on the axis of largest spread
        let mut axis = 0;
        let mut best = -1.0;
        for a in 0..self.dim {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in &self.order[start..end] {
                let v = self.coords[i * self.dim + a];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > best {
                best = hi - lo;
                axis = a;
            }
        }
        if best <= 0.0 {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let (dim, coords) = (self.dim, &self.coords);
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            coords[a * dim + axis]
                .total_cmp(&coords[b * dim + axis])
                .then(a.cmp(&b))
        });
        let value = self.coords[self.order[mid] * self.dim + axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// The `k` nearest points to `q` as `(d², index)`, sorted by (d², index),
    /// skipping index `skip`.
    pub fn knn(&self, q: &[f64], k: usize, skip: Option<usize>) -> Vec<(f64, usize)> {
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        if k > 0 && !self.nodes.is_empty() {
            self.search(0, q, k, skip, &mut best);
        }
        best
    }

    fn search(&self, node: usize, q: &[f64], k: usize, skip: Option<usize>, best: &mut Vec<(f64, usize)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                let dim = self.dim;
                for (slot, &i) in (start..end).zip(&self.order[start..end]) {
                    if Some(i) == skip {
                        continue;
                    }
                    let p = &self.sorted[slot * dim..(slot + 1) * dim];
                    let d2: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
                    let cand = (d2, i);
                    if best.len() == k {
                        let worst = best[k - 1];
                        if cand.0 > worst.0 || (cand.0 == worst.0 && cand.1 > worst.1) {
                            continue;
                        }
                        best.pop();
                    }
                    let pos = best.partition_point(|b| b.0 < cand.0 || (b.0 == cand.0 && b.1 < cand.1));
                    best.insert(pos, cand);
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, skip, best);
                // equal distances must still be visited for the index tie rule
                if best.len() < k || diff * diff <= best[k - 1].0 {
                    self.search(far, q, k, skip, best);
                }
            }
        }
    }
}

/// Points in (x_1..x_E, T_norm) coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborParams {
    pub sigma_x: f64,
    pub sigma_t: f64,
    pub k: usize,
}

impl Default for NeighborParams {
    fn default() -> Self {
        Self {
            sigma_x: DEFAULT_SIGMA,
            sigma_t: DEFAULT_SIGMA,
            k: DEFAULT_K,
        }
    }
}

/// Gaussian weight between two (composition, T_norm) points.
pub fn gaussian_weight(xa: &[f64], ta: f64, xb: &[f64], tb: f64, sigma_x: f64, sigma_t: f64) -> f64 {
    let dx2: f64 = xa.iter().zip(xb).map(|(a, b)| (a - b) * (a - b)).sum();
    let dt = ta - tb;
    (-(dx2 / (sigma_x * sigma_x)) - dt * dt / (sigma_t * sigma_t)).exp()
}

/// kNN graph over `points` (compositions) with normalized temperatures `t`.
/// Points with fewer than `k` others get all of them.
pub fn build_neighbor_graph(points: &[&[f64]], t: &[f64], p: NeighborParams) -> NeighborGraph {
    let n = points.len();
    let dim = points.first().map_or(0, |x| x.len()) + 1;
    let mut coords = Vec::with_capacity(n * dim);
    for (x, &tn) in points.iter().zip(t) {
        coords.extend(x.iter().map(|v| v / p.sigma_x));
        coords.push(tn / p.sigma_t);
    }
    let tree = KdTree::new(coords, dim);
    let k = p.k.min(n.saturating_sub(1));
    let mut neighbors = vec![Vec::new(); n];
    for &i in tree.order() {
        neighbors[i] = tree
            .knn(tree.point(i), k, Some(i))
            .into_iter()
            .map(|(_, j)| (j, gaussian_weight(points[i], t[i], points[j], t[j], p.sigma_x, p.sigma_t)))
            .collect();
    }
    NeighborGraph { k: p.k, neighbors }
}
