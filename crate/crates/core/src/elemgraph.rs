//! Element graph encoding: one node per element carrying its atomic fraction
//! and z-scored elemental descriptors, fully connected, with the normalized
//! temperature attached as a global feature.

use std::path::Path;

use crate::dataio::{DataError, ElementSet, StatePoint, TRange};

pub const N_PROPERTIES: usize = 8;
/// Node feature width: fraction plus the property z-scores.
pub const D_IN: usize = N_PROPERTIES + 1;

pub const PROPERTY_NAMES: [&str; N_PROPERTIES] =
    ["T_melt", "T_b", "rho", "r_atom", "M", "r_cov", "chi", "IE1"];

/// Shipped descriptor table for Ag, Bi, Cu and Sn.
pub const DEFAULT_PROPS: &str = include_str!("../data/elements.props");

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("elements.props line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("no properties for element {0}")]
    MissingElement(String),
    #[error("property {0} has zero variance across the elements")]
    ZeroVariance(&'static str),
    #[error("composition has {got} entries, expected {expected}")]
    Shape { got: usize, expected: usize },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Raw descriptor table, one row per element in element-set order.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementProperties {
    pub rows: Vec<[f64; N_PROPERTIES]>,
}

impl ElementProperties {
    pub fn parse(text: &str, elements: &ElementSet) -> Result<Self, GraphError> {
        let mut found: Vec<Option<[f64; N_PROPERTIES]>> = vec![None; elements.len()];
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let perr = |msg: String| GraphError::Parse { line: i + 1, msg };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != N_PROPERTIES + 1 {
                return Err(perr(format!("expected {} fields, got {}", N_PROPERTIES + 1, f.len())));
            }
            let Some(e) = elements.index_of(f[0]) else {
                continue;
            };
            let mut row = [0.0; N_PROPERTIES];
            for (k, tok) in f[1..].iter().enumerate() {
                let v: f64 = tok.parse().map_err(|_| perr(format!("bad number {tok:?}")))?;
                if !(v > 0.0 && v.is_finite()) {
                    return Err(perr(format!("{} must be positive", PROPERTY_NAMES[k])));
                }
                row[k] = v;
            }
            found[e] = Some(row);
        }
        let rows = found
            .into_iter()
            .enumerate()
            .map(|(e, r)| r.ok_or_else(|| GraphError::MissingElement(elements.names()[e].clone())))
            .collect::<Result<_, _>>()?;
        Ok(Self { rows })
    }

    pub fn load(path: &Path, elements: &ElementSet) -> Result<Self, GraphError> {
        Self::parse(&std::fs::read_to_string(path)?, elements)
    }

    /// The shipped Ag, Bi, Cu, Sn table.
    pub fn default_table(elements: &ElementSet) -> Result<Self, GraphError> {
        Self::parse(DEFAULT_PROPS, elements)
    }
}

/// Column-wise z-scores with the population standard deviation.
pub fn zscore_properties(props: &ElementProperties) -> Result<Vec<[f64; N_PROPERTIES]>, GraphError> {
    let n = props.rows.len() as f64;
    let mut z = props.rows.clone();
    for k in 0..N_PROPERTIES {
        let mean = props.rows.iter().map(|r| r[k]).sum::<f64>() / n;
        let var = props.rows.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if !(sd > 1e-12 * mean.abs().max(1.0)) {
            return Err(GraphError::ZeroVariance(PROPERTY_NAMES[k]));
        }
        for (zr, r) in z.iter_mut().zip(&props.rows) {
            zr[k] = (r[k] - mean) / sd;
        }
    }
    Ok(z)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElementGraph {
    pub n_nodes: usize,
    /// Row-major `n_nodes x D_IN` node features.
    pub x: Vec<f64>,
    /// Directed edges `(i, j)`: node `i` attends to node `j`.
    pub edges: Vec<(usize, usize)>,
    pub t_norm: f64,
    pub t_clamped: bool,
}

impl ElementGraph {
    /// `adj[i * n + j]` is true when `(i, j)` is an edge.
    pub fn adjacency(&self) -> Vec<bool> {
        let n = self.n_nodes;
        let mut adj = vec![false; n * n];
        for &(i, j) in &self.edges {
            adj[i * n + j] = true;
        }
        adj
    }
}

/// Precomputed z-table and temperature range shared by all graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBuilder {
    pub z: Vec<[f64; N_PROPERTIES]>,
    pub t_range: TRange,
    pub self_loops: bool,
}

impl GraphBuilder {
    pub fn new(props: &ElementProperties, t_range: TRange, self_loops: bool) -> Result<Self, GraphError> {
        Ok(Self {
            z: zscore_properties(props)?,
            t_range,
            self_loops,
        })
    }

    pub fn build(&self, q: &StatePoint) -> Result<ElementGraph, GraphError> {
        build_graph(q, &self.z, self.t_range, self.self_loops)
    }
}

/// Fully connected graph over the elements; self-loops optional.
pub fn build_graph(
    q: &StatePoint,
    z: &[[f64; N_PROPERTIES]],
    t_range: TRange,
    self_loops: bool,
) -> Result<ElementGraph, GraphError> {
    let n = z.len();
    if q.x.len() != n {
        return Err(GraphError::Shape {
            got: q.x.len(),
            expected: n,
        });
    }
    let mut x = Vec::with_capacity(n * D_IN);
    for (e, ze) in z.iter().enumerate() {
        x.push(q.x[e]);
        x.extend_from_slice(ze);
    }
    let edges = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| self_loops || i != j)
        .collect();
    let (t_norm, t_clamped) = t_range.normalize(q.t)?;
    Ok(ElementGraph {
        n_nodes: n,
        x,
        edges,
        t_norm,
        t_clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn range() -> TRange {
        TRange { min: 900.0, max: 1000.0 }
    }

    fn table() -> Vec<[f64; N_PROPERTIES]> {
        let el = ElementSet::ag_bi_cu_sn();
        zscore_properties(&ElementProperties::default_table(&el).unwrap()).unwrap()
    }

    #[test]
    fn zscore_hand_values() {
        let mut rows = vec![[1.0; N_PROPERTIES]; 4];
        for (i, r) in rows.iter_mut().enumerate() {
            *r = [(i + 1) as f64; N_PROPERTIES];
        }
        let z = zscore_properties(&ElementProperties { rows }).unwrap();
        // mean 2.5, population sd sqrt(1.25)
        let expected = [-1.3416407865, -0.4472135955, 0.4472135955, 1.3416407865];
        for (zr, e) in z.iter().zip(expected) {
            assert!((zr[0] - e).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_variance_names_property() {
        let mut rows = vec![[0.0; N_PROPERTIES]; 4];
        for (i, r) in rows.iter_mut().enumerate() {
            for (k, v) in r.iter_mut().enumerate() {
                *v = 1.0 + (i * k) as f64;
            }
        }
        match zscore_properties(&ElementProperties { rows }) {
            Err(GraphError::ZeroVariance(name)) => assert_eq!(name, "T_melt"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn shipped_table_is_standardized() {
        let z = table();
        for k in 0..N_PROPERTIES {
            let mean: f64 = z.iter().map(|r| r[k]).sum::<f64>() / 4.0;
            let var: f64 = z.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var.sqrt() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn graph_shape_and_features() {
        let z = table();
        let g = build_graph(&StatePoint::new(vec![1.0, 0.0, 0.0, 0.0], 950.0), &z, range(), true).unwrap();
        assert_eq!(g.x.len(), 4 * D_IN);
        assert_eq!(D_IN, 9);
        assert_eq!(g.edges.len(), 16);
        assert_eq!(g.x[0], 1.0);
        for e in 1..4 {
            assert_eq!(g.x[e * D_IN], 0.0);
        }
        let g2 = build_graph(&StatePoint::new(vec![0.0, 1.0, 0.0, 0.0], 950.0), &z, range(), false).unwrap();
        assert_eq!(g2.edges.len(), 12);
        assert!(g2.edges.iter().all(|(i, j)| i != j));
    }

    #[test]
    fn temperature_enters_only_globally() {
        let z = table();
        let x = vec![0.1, 0.2, 0.3, 0.4];
        let a = build_graph(&StatePoint::new(x.clone(), 910.0), &z, range(), true).unwrap();
        let b = build_graph(&StatePoint::new(x, 990.0), &z, range(), true).unwrap();
        assert_eq!(a.x, b.x);
        assert_ne!(a.t_norm, b.t_norm);
    }
}
