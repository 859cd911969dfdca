//! Synthetic Gibbs-minimization oracle: regular-solution phase models, a
//! grid-based lower convex envelope and dataset generation on top of it.

mod hull;
mod model;

use std::collections::HashMap;

pub use hull::{for_each_lattice_point, lattice_count, HullSolution, HullSolver};
pub use model::{phase_g, ModelSet, PhaseModel, R_GAS};

use crate::dataio::{
    quantize9, DataError, Dataset, ElementMask, PhaseLabelSet, Sample, StatePoint, EPS_ELEMENT,
    EPS_PHASE,
};

#[derive(Debug, thiserror::Error)]
pub enum ThermoError {
    #[error("model config: {0}")]
    Config(String),
    #[error("empty model list")]
    NoModels,
    #[error("phase {phase} has no end member for element index {element}")]
    Unsupported { phase: String, element: usize },
    #[error("elements {0:#x} are outside every phase support")]
    OutsideSupport(ElementMask),
    #[error("invalid state point: {0}")]
    BadState(String),
    #[error("hull solver: {0}")]
    Numerical(String),
    #[error("at x = {x:?}, T = {t}: {source}")]
    AtPoint {
        x: Vec<f64>,
        t: f64,
        #[source]
        source: Box<ThermoError>,
    },
    #[error(transparent)]
    Data(#[from] DataError),
}

/// One supporting vertex of the hull facet at a query.
#[derive(Debug, Clone, PartialEq)]
pub struct FacetVertex {
    pub phase: usize,
    /// Full composition vector of the grid point.
    pub x: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumResult {
    pub labels: PhaseLabelSet,
    /// Per-phase amounts over the whole vocabulary, summing to 1.
    pub fractions: Vec<f64>,
    pub facet_vertices: Vec<FacetVertex>,
    /// Envelope Gibbs energy at the query (J/mol).
    pub g: f64,
}

/// Grid divisions for a step given as a fraction in [0.01, 0.1].
pub fn grid_divisions(step: f64) -> Result<usize, ThermoError> {
    let n = (1.0 / step).round();
    if !(10.0..=100.0).contains(&n) || (n * step - 1.0).abs() > 1e-9 {
        return Err(ThermoError::Config(format!(
            "grid step {step} must be 1/n for an integer n in 10..=100"
        )));
    }
    Ok(n as usize)
}

/// Caches one hull solver per (subsystem, temperature).
#[derive(Debug, Clone)]
pub struct Oracle {
    pub models: ModelSet,
    /// Oracle grid step for each subsystem size (index = number of elements).
    steps: Vec<f64>,
    solvers: HashMap<(ElementMask, u64), HullSolver>,
}

impl Oracle {
    /// Grid step 0.01 up to ternaries and 0.02 from quaternaries on.
    pub fn new(models: ModelSet) -> Self {
        let steps = (0..=models.elements.len())
            .map(|d| if d <= 3 { 0.01 } else { 0.02 })
            .collect();
        Self {
            models,
            steps,
            solvers: HashMap::new(),
        }
    }

    /// Same grid step for every subsystem size.
    pub fn with_grid_step(models: ModelSet, step: f64) -> Result<Self, ThermoError> {
        grid_divisions(step)?;
        let steps = vec![step; models.elements.len() + 1];
        Ok(Self {
            models,
            steps,
            solvers: HashMap::new(),
        })
    }

    pub fn grid_step(&self, dim: usize) -> f64 {
        self.steps[dim]
    }

    pub fn solver(&mut self, subsystem: ElementMask, t: f64) -> Result<&mut HullSolver, ThermoError> {
        let key = (subsystem, t.to_bits());
        if !self.solvers.contains_key(&key) {
            let dim = subsystem.count_ones() as usize;
            let n = grid_divisions(self.steps[dim])?;
            let s = HullSolver::new(&self.models, subsystem, t, n)?;
            self.solvers.insert(key, s);
        }
        Ok(self.solvers.get_mut(&key).expect("inserted above"))
    }

    pub fn equilibrium(&mut self, q: &StatePoint) -> Result<EquilibriumResult, ThermoError> {
        let ne = self.models.elements.len();
        let k = self.models.phases.len();
        if k == 0 {
            return Err(ThermoError::NoModels);
        }
        if q.x.len() != ne {
            return Err(ThermoError::BadState(format!(
                "expected {ne} fractions, got {}",
                q.x.len()
            )));
        }
        q.check_simplex().map_err(ThermoError::BadState)?;
        let present = q.present();
        if present == 0 {
            return Err(ThermoError::BadState("no element present".into()));
        }
        let solver = self.solver(present, q.t)?;
        let elems = solver.elements().to_vec();
        let total: f64 = elems.iter().map(|&e| q.x[e]).sum();
        let qs: Vec<f64> = elems.iter().map(|&e| q.x[e] / total).collect();
        let sol = solver.solve(&qs)?;
        let wsum: f64 = sol.lambda.iter().sum();
        let mut fractions = vec![0.0; k];
        let mut facet_vertices = Vec::with_capacity(sol.basis.len());
        for (&j, &l) in sol.basis.iter().zip(&sol.lambda) {
            let w = l / wsum;
            let p = solver.column_phase(j);
            fractions[p] += w;
            let mut x = vec![0.0; ne];
            for (&e, &v) in elems.iter().zip(solver.column_x(j)) {
                x[e] = v;
            }
            facet_vertices.push(FacetVertex { phase: p, x, weight: w });
        }
        let labels = PhaseLabelSet::from_indices(
            (0..k).filter(|&p| quantize9(fractions[p]) > EPS_PHASE),
        );
        Ok(EquilibriumResult {
            labels,
            fractions,
            facet_vertices,
            g: sol.g,
        })
    }
}

/// One-off equilibrium with a uniform grid step; use [`Oracle`] for batches.
pub fn equilibrium(models: &ModelSet, q: &StatePoint, grid_step: f64) -> Result<EquilibriumResult, ThermoError> {
    Oracle::with_grid_step(models.clone(), grid_step)?.equilibrium(q)
}

/// Extra temperatures for one subsystem, e.g. where boundaries are dense.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementWindow {
    pub subsystem: ElementMask,
    pub t_start: f64,
    pub t_stop: f64,
    pub t_step: f64,
}

impl RefinementWindow {
    pub fn temperatures(&self) -> Vec<f64> {
        inclusive_range(self.t_start, self.t_stop, self.t_step)
    }
}

/// Inclusive arithmetic range, robust to rounding at the end point.
pub fn inclusive_range(start: f64, stop: f64, step: f64) -> Vec<f64> {
    if step <= 0.0 || stop < start {
        return if (stop - start).abs() < 1e-12 { vec![start] } else { Vec::new() };
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| quantize9(start + i as f64 * step)).collect()
}

/// What to sample: binaries (and unaries) across `t_schedule`, larger
/// subsystems on the single `isothermal_t` plane.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationPlan {
    /// Composition step in at.%; must divide 100.
    pub comp_step: u32,
    pub t_schedule: Vec<f64>,
    pub isothermal_t: f64,
    pub subsystems: Vec<ElementMask>,
    pub refinements: Vec<RefinementWindow>,
}

impl GenerationPlan {
    /// All six binaries at 2 at.% over 913.15..1033.15 K in 20 K steps and
    /// the Ag-Bi-Cu, Ag-Cu-Sn and Bi-Cu-Sn planes at 973.15 K.
    pub fn default_benchmark(models: &ModelSet) -> Self {
        let el = &models.elements;
        let mut subsystems = all_subsets(el.len(), 2);
        for s in ["Ag-Bi-Cu", "Ag-Cu-Sn", "Bi-Cu-Sn"] {
            subsystems.push(el.parse_system(s).expect("default element set"));
        }
        Self {
            comp_step: 2,
            t_schedule: inclusive_range(913.15, 1033.15, 20.0),
            isothermal_t: 973.15,
            subsystems,
            refinements: Vec::new(),
        }
    }

    fn temperatures_for(&self, subsystem: ElementMask) -> Vec<f64> {
        if subsystem.count_ones() >= 3 {
            return vec![self.isothermal_t];
        }
        let mut ts = self.t_schedule.clone();
        for w in self.refinements.iter().filter(|w| w.subsystem == subsystem) {
            ts.extend(w.temperatures());
        }
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts
    }
}

/// Every subset of `n` elements with exactly `size` members, in mask order.
pub fn all_subsets(n: usize, size: u32) -> Vec<ElementMask> {
    (1..(1u32 << n)).filter(|m| m.count_ones() == size).collect()
}

/// Lattice compositions of `subsystem` at `comp_step` at.%, as full vectors.
pub fn subsystem_grid(n_elements: usize, subsystem: ElementMask, comp_step: u32) -> Vec<Vec<f64>> {
    let elems: Vec<usize> = (0..n_elements).filter(|e| subsystem & (1 << e) != 0).collect();
    let n = (100 / comp_step) as usize;
    let mut out = Vec::with_capacity(lattice_count(elems.len(), n));
    for_each_lattice_point(elems.len(), n, |c| {
        let mut x = vec![0.0; n_elements];
        for (&e, &v) in elems.iter().zip(c) {
            x[e] = v as f64 / n as f64;
        }
        out.push(x);
    });
    out
}

/// Labels every grid point of the plan with the oracle.
pub fn generate_dataset(oracle: &mut Oracle, plan: &GenerationPlan) -> Result<Dataset, ThermoError> {
    if plan.comp_step == 0 || 100 % plan.comp_step != 0 {
        return Err(ThermoError::Config(format!(
            "composition step {} does not divide 100",
            plan.comp_step
        )));
    }
    if plan.t_schedule.is_empty() {
        return Err(ThermoError::Config("empty temperature schedule".into()));
    }
    let ne = oracle.models.elements.len();
    let mut samples = Vec::new();
    let mut ts_all = Vec::new();
    for &sub in &plan.subsystems {
        if sub == 0 || sub >> ne != 0 {
            return Err(ThermoError::Config(format!("bad subsystem mask {sub:#x}")));
        }
        let grid = subsystem_grid(ne, sub, plan.comp_step);
        for t in plan.temperatures_for(sub) {
            ts_all.push(t);
            for x in &grid {
                let q = StatePoint::new(x.clone(), t);
                let r = oracle.equilibrium(&q).map_err(|e| ThermoError::AtPoint {
                    x: x.clone(),
                    t,
                    source: Box::new(e),
                })?;
                samples.push(Sample::from_fractions(q, &r.fractions));
            }
        }
    }
    let t_min = ts_all.iter().copied().fold(f64::INFINITY, f64::min);
    let t_max = ts_all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ds = Dataset {
        elements: oracle.models.elements.clone(),
        vocab: oracle.models.vocab.clone(),
        t_min: quantize9(t_min),
        t_max: quantize9(t_max),
        samples,
    };
    ds.validate()?;
    Ok(ds)
}

/// Number of present elements at the default threshold.
pub fn present_count(x: &[f64]) -> usize {
    x.iter().filter(|&&v| v > EPS_ELEMENT).count()
}
