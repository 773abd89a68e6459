//! Dense least-distance quadratic programs
//!
//! ```text
//!     minimize    ‖w + g‖²
//!     subject to  G w ≤ h
//! ```
//!
//! solved with a dual active-set method (Goldfarb–Idnani specialized to an
//! identity Hessian). Starting from the unconstrained minimizer −g, the most
//! violated constraint is added at each outer iteration while primal
//! stationarity and dual feasibility are maintained; constraints whose
//! multiplier reaches zero are dropped on the way.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance below which a constraint normal is treated as lying in
/// the span of the active normals.
const INDEPENDENCE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub g: Vec<f64>,
    /// One row per inequality, `n` columns.
    pub g_ineq: DMatrix<f64>,
    pub h_ineq: Vec<f64>,
}

impl QpProblem {
    pub fn new(g: Vec<f64>, g_ineq: DMatrix<f64>, h_ineq: Vec<f64>) -> Result<Self> {
        let p = Self { g, g_ineq, h_ineq };
        p.check()?;
        Ok(p)
    }

    pub fn unconstrained(g: Vec<f64>) -> Self {
        let n = g.len();
        Self { g, g_ineq: DMatrix::zeros(0, n), h_ineq: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn n_constraints(&self) -> usize {
        self.h_ineq.len()
    }

    fn check(&self) -> Result<()> {
        if self.g_ineq.ncols() != self.g.len() || self.g_ineq.nrows() != self.h_ineq.len() {
            return Err(Error::Config(format!(
                "QP dimensions disagree: g has {}, G is {}x{}, h has {}",
                self.g.len(),
                self.g_ineq.nrows(),
                self.g_ineq.ncols(),
                self.h_ineq.len()
            )));
        }
        let finite = self.g.iter().chain(&self.h_ineq).chain(self.g_ineq.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("QP data must be finite".into()));
        }
        Ok(())
    }

    pub fn objective(&self, w: &[f64]) -> f64 {
        w.iter().zip(&self.g).map(|(a, b)| (a + b) * (a + b)).sum()
    }

    /// Largest constraint violation max(0, G w − h).
    pub fn max_violation(&self, w: &[f64]) -> f64 {
        let wv = DVector::from_column_slice(w);
        let gw = &self.g_ineq * wv;
        gw.iter().zip(&self.h_ineq).fold(0.0, |m, (a, b)| m.max(a - b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub w: Vec<f64>,
    /// Constraints in the final active set, ascending.
    pub active_set: Vec<usize>,
    /// Multiplier per constraint (zero off the active set), scaled for the
    /// stationarity condition w + g + Gᵀλ = 0.
    pub multipliers: Vec<f64>,
    pub status: QpStatus,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.dual).max(self.complementarity)
    }
}

pub fn kkt_residuals(p: &QpProblem, sol: &QpSolution) -> KktResiduals {
    let n = p.dim();
    let lam = DVector::from_column_slice(&sol.multipliers);
    let grad = p.g_ineq.transpose() * &lam;
    let stationarity = (0..n).fold(0.0f64, |m, k| m.max((sol.w[k] + p.g[k] + grad[k]).abs()));
    let wv = DVector::from_column_slice(&sol.w);
    let gw = &p.g_ineq * wv;
    let mut primal = 0.0f64;
    let mut complementarity = 0.0f64;
    for j in 0..p.n_constraints() {
        let slack = p.h_ineq[j] - gw[j];
        primal = primal.max(-slack);
        complementarity = complementarity.max((sol.multipliers[j] * slack).abs());
    }
    let dual = sol.multipliers.iter().fold(0.0f64, |m, l| m.max(-l));
    KktResiduals { stationarity, primal, dual, complementarity }
}

/// Null-space projection of `a` against the rows of `active` and the
/// coefficients of `a` in those rows: a = activeᵀ r + z.
fn project(active_rows: &[DVector<f64>], a: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let q = active_rows.len();
    if q == 0 {
        return (a.clone(), DVector::zeros(0));
    }
    let n = a.len();
    let nt = DMatrix::from_fn(n, q, |i, j| active_rows[j][i]);
    let qr = nt.qr();
    let qm = qr.q();
    let rm = qr.r();
    let qta = qm.transpose() * a;
    let z = a - &qm * &qta;
    let r = rm
        .solve_upper_triangular(&qta)
        .unwrap_or_else(|| DVector::from_element(q, f64::NAN));
    (z, r)
}

/// Solves the least-distance QP. Dimension errors are reported as `Err`;
/// infeasibility and the iteration cap are reported through `status`.
pub fn qp_solve(p: &QpProblem) -> Result<QpSolution> {
    p.check()?;
    let n = p.dim();
    let m = p.n_constraints();
    let max_iter = 10 * (n + m);
    let rows: Vec<DVector<f64>> = (0..m).map(|j| p.g_ineq.row(j).transpose()).collect();
    let row_norm: Vec<f64> = rows.iter().map(|r| r.norm()).collect();

    let mut x = -DVector::from_column_slice(&p.g);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut iterations = 0;

    let finish = |x: &DVector<f64>, active: &[usize], u: &[f64], status, iterations| {
        let mut multipliers = vec![0.0; m];
        for (&j, &uj) in active.iter().zip(u) {
            multipliers[j] = uj;
        }
        let mut active_set = active.to_vec();
        active_set.sort_unstable();
        QpSolution { w: x.iter().copied().collect(), active_set, multipliers, status, iterations }
    };

    loop {
        // most violated inactive constraint, lowest index on ties
        let mut worst: Option<(usize, f64)> = None;
        for j in 0..m {
            if active.contains(&j) {
                continue;
            }
            let viol = rows[j].dot(&x) - p.h_ineq[j];
            let tol = 1e-12 * (1.0 + p.h_ineq[j].abs() + row_norm[j] * x.amax());
            if viol > tol && worst.is_none_or(|(_, w)| viol > w) {
                worst = Some((j, viol));
            }
        }
        let Some((jp, _)) = worst else {
            return Ok(finish(&x, &active, &u, QpStatus::Optimal, iterations));
        };

        let mut u_p = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Ok(finish(&x, &active, &u, QpStatus::MaxIter, iterations));
            }
            let active_rows: Vec<DVector<f64>> = active.iter().map(|&j| rows[j].clone()).collect();
            let (proj, r) = project(&active_rows, &rows[jp]);
            // moving along z = −proj lowers G_p x at rate ‖proj‖²
            let proj_sq = proj.norm_squared();
            let dependent = proj.norm() <= INDEPENDENCE_TOL * row_norm[jp].max(f64::MIN_POSITIVE);

            let mut t_dual = f64::INFINITY;
            let mut drop_at: Option<usize> = None;
            for (k, &rk) in r.iter().enumerate() {
                if rk > 0.0 {
                    let t = u[k] / rk;
                    if t < t_dual {
                        t_dual = t;
                        drop_at = Some(k);
                    }
                }
            }
            let viol = rows[jp].dot(&x) - p.h_ineq[jp];
            let t_primal = if dependent { f64::INFINITY } else { viol / proj_sq };

            if t_dual.is_infinite() && t_primal.is_infinite() {
                return Ok(finish(&x, &active, &u, QpStatus::Infeasible, iterations));
            }
            let t = t_dual.min(t_primal);
            if !dependent {
                x -= &proj * t;
            }
            for (k, rk) in r.iter().enumerate() {
                u[k] -= t * rk;
            }
            u_p += t;

            if t_primal <= t_dual {
                active.push(jp);
                u.push(u_p);
                break;
            }
            let k = drop_at.expect("finite dual step has a blocking constraint");
            active.remove(k);
            u.remove(k);
        }
    }
}
