//! Lower convex envelope of grid-sampled Gibbs energies, solved as a small
//! linear program per query.
//!
//! For a subsystem of `d` present elements every lattice composition
//! contributes one column `(x_j, G_j)` holding the lowest-energy phase there.
//! The envelope value at `q` is `min sum λ_j G_j` subject to `sum λ_j x_j = q`
//! and `λ ≥ 0`; an optimal basis is a hull facet and its weights are the
//! phase amounts. Optimality of a basis does not depend on `q`, so facets
//! found once are reused for every later query they contain.

use super::model::{phase_g, ModelSet};
use super::ThermoError;
use crate::dataio::ElementMask;

const MAX_DIM: usize = 8;
const MAX_COLUMNS: usize = 2_000_000;
/// Entering threshold on reduced costs (J/mol).
const REDUCED_COST_TOL: f64 = 1e-10;
const PIVOT_TOL: f64 = 1e-12;
const FEASIBLE_TOL: f64 = 1e-12;
const BLAND_AFTER: usize = 50;
const MAX_ITER: usize = 5000;
const FACET_CACHE: usize = 64;

/// Number of lattice points of the (d-1)-simplex with `n` divisions.
pub fn lattice_count(d: usize, n: usize) -> usize {
    // C(n + d - 1, d - 1)
    let mut c: u128 = 1;
    for i in 0..d.saturating_sub(1) {
        c = c * (n + 1 + i) as u128 / (i + 1) as u128;
    }
    c as usize
}

/// Calls `f` with the integer coordinates of every lattice point of the
/// (d-1)-simplex with `n` divisions, in lexicographic order.
pub fn for_each_lattice_point(d: usize, n: usize, mut f: impl FnMut(&[usize])) {
    let mut c = vec![0usize; d];
    fn rec(c: &mut Vec<usize>, pos: usize, left: usize, f: &mut dyn FnMut(&[usize])) {
        if pos + 1 == c.len() {
            c[pos] = left;
            f(c);
            return;
        }
        for v in 0..=left {
            c[pos] = v;
            rec(c, pos + 1, left - v, f);
        }
    }
    if d == 0 {
        return;
    }
    rec(&mut c, 0, n, &mut f);
}

#[derive(Debug, Clone)]
pub struct HullSolution {
    /// Column indices of the supporting facet.
    pub basis: Vec<usize>,
    /// Barycentric weights of the basis columns.
    pub lambda: Vec<f64>,
    /// Envelope Gibbs energy at the query (J/mol).
    pub g: f64,
}

/// Candidate columns for one subsystem at one temperature.
#[derive(Debug, Clone)]
pub struct HullSolver {
    pub subsystem: ElementMask,
    pub t: f64,
    elems: Vec<usize>,
    dim: usize,
    xs: Vec<f64>,
    g: Vec<f64>,
    shift: Vec<f64>,
    phase: Vec<u16>,
    corners: Vec<usize>,
    facets: Vec<Vec<usize>>,
}

impl HullSolver {
    pub fn new(models: &ModelSet, subsystem: ElementMask, t: f64, n: usize) -> Result<Self, ThermoError> {
        if models.phases.is_empty() {
            return Err(ThermoError::NoModels);
        }
        let ne = models.elements.len();
        let elems: Vec<usize> = (0..ne).filter(|e| subsystem & (1 << e) != 0).collect();
        let dim = elems.len();
        if dim == 0 || dim > MAX_DIM {
            return Err(ThermoError::Config(format!("bad subsystem mask {subsystem:#x}")));
        }
        if subsystem & !models.support() != 0 {
            return Err(ThermoError::OutsideSupport(subsystem & !models.support()));
        }
        let count = lattice_count(dim, n);
        if count > MAX_COLUMNS {
            return Err(ThermoError::Config(format!(
                "{count} grid points exceed the column limit; use a coarser grid step"
            )));
        }
        let mut xs = Vec::with_capacity(count * dim);
        let mut g = Vec::with_capacity(count);
        let mut phase = Vec::with_capacity(count);
        let mut full = vec![0.0; ne];
        let mut err = None;
        for_each_lattice_point(dim, n, |c| {
            if err.is_some() {
                return;
            }
            let mut present: ElementMask = 0;
            full.iter_mut().for_each(|v| *v = 0.0);
            for (k, &e) in elems.iter().enumerate() {
                full[e] = c[k] as f64 / n as f64;
                if c[k] > 0 {
                    present |= 1 << e;
                }
            }
            let mut best: Option<(f64, usize)> = None;
            for (p, pm) in models.phases.iter().enumerate() {
                if present & !pm.support() != 0 || pm.required & !present != 0 {
                    continue;
                }
                match phase_g(pm, &full, t) {
                    Ok(v) => {
                        if best.map_or(true, |(bg, _)| v < bg) {
                            best = Some((v, p));
                        }
                    }
                    Err(e) => err = Some(e),
                }
            }
            if let Some((v, p)) = best {
                xs.extend(elems.iter().map(|&e| full[e]));
                g.push(v);
                phase.push(p as u16);
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        let ncols = g.len();
        let mut corners = vec![usize::MAX; dim];
        for j in 0..ncols {
            let x = &xs[j * dim..(j + 1) * dim];
            if let Some(k) = x.iter().position(|&v| v == 1.0) {
                corners[k] = j;
            }
        }
        if let Some(k) = corners.iter().position(|&c| c == usize::MAX) {
            return Err(ThermoError::OutsideSupport(1 << elems[k]));
        }
        // Subtracting the affine interpolant of the corner energies leaves the
        // optimal facets unchanged and keeps the LP well scaled.
        let shift: Vec<f64> = corners.iter().map(|&c| g[c]).collect();
        for j in 0..ncols {
            let x = &xs[j * dim..(j + 1) * dim];
            let s: f64 = x.iter().zip(&shift).map(|(a, b)| a * b).sum();
            g[j] -= s;
        }
        Ok(Self {
            subsystem,
            t,
            elems,
            dim,
            xs,
            g,
            shift,
            phase,
            corners,
            facets: Vec::new(),
        })
    }

    pub fn elements(&self) -> &[usize] {
        &self.elems
    }

    pub fn num_columns(&self) -> usize {
        self.g.len()
    }

    pub fn column_phase(&self, j: usize) -> usize {
        self.phase[j] as usize
    }

    pub fn column_x(&self, j: usize) -> &[f64] {
        &self.xs[j * self.dim..(j + 1) * self.dim]
    }

    /// Unshifted Gibbs energy of column `j`.
    pub fn column_g(&self, j: usize) -> f64 {
        self.g[j] + dot(self.column_x(j), &self.shift)
    }

    fn basis_matrix(&self, basis: &[usize]) -> [f64; MAX_DIM * MAX_DIM] {
        let d = self.dim;
        let mut m = [0.0; MAX_DIM * MAX_DIM];
        for (c, &j) in basis.iter().enumerate() {
            for r in 0..d {
                m[r * d + c] = self.xs[j * d + r];
            }
        }
        m
    }

    /// Weights of `basis` at `q`, or `None` if singular or infeasible.
    fn feasible_weights(&self, basis: &[usize], q: &[f64]) -> Option<Vec<f64>> {
        let d = self.dim;
        let mut m = self.basis_matrix(basis);
        let mut rhs = [0.0; MAX_DIM];
        rhs[..d].copy_from_slice(q);
        if !lu_solve(&mut m, &mut rhs, d) {
            return None;
        }
        if rhs[..d].iter().any(|&v| v < -FEASIBLE_TOL) {
            return None;
        }
        Some(rhs[..d].iter().map(|&v| v.max(0.0)).collect())
    }

    fn finish(&self, basis: Vec<usize>, lambda: Vec<f64>, q: &[f64]) -> HullSolution {
        let g = basis.iter().zip(&lambda).map(|(&j, &l)| l * self.g[j]).sum::<f64>() + dot(q, &self.shift);
        HullSolution { basis, lambda, g }
    }

    /// Solves for the facet containing `q`, given in subsystem coordinates.
    pub fn solve(&mut self, q: &[f64]) -> Result<HullSolution, ThermoError> {
        let d = self.dim;
        if q.len() != d {
            return Err(ThermoError::Config("query dimension mismatch".into()));
        }
        for i in 0..self.facets.len() {
            if let Some(lambda) = self.feasible_weights(&self.facets[i], q) {
                let basis = self.facets[i].clone();
                if i > 0 {
                    let f = self.facets.remove(i);
                    self.facets.insert(0, f);
                }
                return Ok(self.finish(basis, lambda, q));
            }
        }
        let (basis, lambda) = self.simplex(q)?;
        self.facets.insert(0, basis.clone());
        self.facets.truncate(FACET_CACHE);
        Ok(self.finish(basis, lambda, q))
    }

    fn simplex(&self, q: &[f64]) -> Result<(Vec<usize>, Vec<f64>), ThermoError> {
        let d = self.dim;
        let ncols = self.g.len();
        let mut basis = self.corners.clone();
        for iter in 0..MAX_ITER {
            let mut lu = self.basis_matrix(&basis);
            let mut lambda = [0.0; MAX_DIM];
            lambda[..d].copy_from_slice(q);
            if !lu_solve(&mut lu, &mut lambda, d) {
                return Err(ThermoError::Numerical("singular basis".into()));
            }
            // dual: B^T y = g_B
            let m = self.basis_matrix(&basis);
            let mut mt = [0.0; MAX_DIM * MAX_DIM];
            for r in 0..d {
                for c in 0..d {
                    mt[r * d + c] = m[c * d + r];
                }
            }
            let mut y = [0.0; MAX_DIM];
            for (k, &j) in basis.iter().enumerate() {
                y[k] = self.g[j];
            }
            if !lu_solve(&mut mt, &mut y, d) {
                return Err(ThermoError::Numerical("singular basis".into()));
            }
            let bland = iter >= BLAND_AFTER;
            let mut entering = None;
            let mut best = -REDUCED_COST_TOL;
            for j in 0..ncols {
                let x = &self.xs[j * d..(j + 1) * d];
                let r = self.g[j] - dot(x, &y[..d]);
                if r < best {
                    entering = Some(j);
                    if bland {
                        break;
                    }
                    best = r;
                }
            }
            let Some(e) = entering else {
                let lambda = lambda[..d].iter().map(|&v| v.max(0.0)).collect();
                return Ok((basis, lambda));
            };
            let mut u = [0.0; MAX_DIM];
            u[..d].copy_from_slice(&self.xs[e * d..(e + 1) * d]);
            let mut lu = self.basis_matrix(&basis);
            lu_solve(&mut lu, &mut u, d);
            let mut leave: Option<(f64, usize)> = None;
            for k in 0..d {
                if u[k] > PIVOT_TOL {
                    let ratio = lambda[k].max(0.0) / u[k];
                    let better = match leave {
                        None => true,
                        Some((r, kk)) => ratio < r - 1e-15 || (ratio <= r + 1e-15 && basis[k] < basis[kk]),
                    };
                    if better {
                        leave = Some((ratio, k));
                    }
                }
            }
            let Some((_, k)) = leave else {
                return Err(ThermoError::Numerical("unbounded pivot".into()));
            };
            basis[k] = e;
        }
        Err(ThermoError::Numerical(format!(
            "simplex did not converge in {MAX_ITER} iterations"
        )))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gaussian elimination with partial pivoting on a row-major `n x n` matrix.
/// Overwrites `b` with the solution; returns false when singular.
fn lu_solve(a: &mut [f64; MAX_DIM * MAX_DIM], b: &mut [f64; MAX_DIM], n: usize) -> bool {
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap();
        if a[piv * n + col].abs() < 1e-14 {
            return false;
        }
        if piv != col {
            for c in 0..n {
                a.swap(piv * n + c, col * n + c);
            }
            b.swap(piv, col);
        }
        for r in col + 1..n {
            let f = a[r * n + col] / a[col * n + col];
            if f != 0.0 {
                for c in col..n {
                    a[r * n + c] -= f * a[col * n + c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    for r in (0..n).rev() {
        let mut s = b[r];
        for c in r + 1..n {
            s -= a[r * n + c] * b[c];
        }
        b[r] = s / a[r * n + r];
    }
    true
}
