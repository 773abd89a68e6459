//! Online feedback optimization: a projected gradient step on the measured
//! outputs, re-linearized at every sample.
//!
//! The objective is Φ(y) = (v_a − v_b)² + Δθ² across the monitored pair. The
//! update u ← u + α·w solves
//!
//! ```text
//!     minimize    ‖w + ∇ᵤhᵀ∇Φ‖²
//!     subject to  u_min ≤ u + α w ≤ u_max
//!                 v_min ≤ v + α S_v w ≤ v_max
//!                 ℓ + α S_ℓ w ≤ ℓ_max
//! ```
//!
//! If the output rows admit no solution they are relaxed with penalized
//! slacks; the input box is never relaxed.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Measurement, NetworkModel};
use crate::qp::{qp_solve, QpProblem, QpStatus};
use crate::sensitivity::SensitivityMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfoConfig {
    pub alpha: f64,
    /// Seconds between controller updates.
    pub sampling_period: f64,
    /// Active power set-point bounds, generator base.
    pub p_min: f64,
    pub p_max: f64,
    /// Voltage set-point bounds.
    pub v_min: f64,
    pub v_max: f64,
    /// Penalty on output-constraint slack.
    pub rho: f64,
    /// Half-width of uniform noise added to every measured output.
    pub noise: f64,
}

impl Default for OfoConfig {
    fn default() -> Self {
        Self {
            alpha: 3.0,
            sampling_period: 5.0,
            p_min: 0.0,
            p_max: 1.0,
            v_min: 0.9,
            v_max: 1.1,
            rho: 1e3,
            noise: 0.0,
        }
    }
}

impl OfoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return bad("ofo.alpha must be positive");
        }
        if !(self.sampling_period.is_finite() && self.sampling_period > 0.0) {
            return bad("ofo.sampling_period must be positive");
        }
        if !(self.p_min.is_finite() && self.p_max.is_finite() && self.p_min <= self.p_max) {
            return bad("ofo power bounds must be finite and ordered");
        }
        if !(self.v_min.is_finite() && self.v_max.is_finite() && self.v_min <= self.v_max) {
            return bad("ofo voltage bounds must be finite and ordered");
        }
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return bad("ofo.rho must be positive");
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad("ofo.noise must be non-negative");
        }
        Ok(())
    }

    pub fn input_bounds(&self, n_gen: usize) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![self.p_min; n_gen];
        lo.extend(std::iter::repeat_n(self.v_min, n_gen));
        let mut hi = vec![self.p_max; n_gen];
        hi.extend(std::iter::repeat_n(self.v_max, n_gen));
        (lo, hi)
    }
}

/// Output constraint data taken from the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputLimits {
    pub v_min: Vec<f64>,
    pub v_max: Vec<f64>,
    pub flow_max: Vec<f64>,
}

impl OutputLimits {
    pub fn from_network(net: &NetworkModel) -> Self {
        Self {
            v_min: net.buses().iter().map(|b| b.v_min).collect(),
            v_max: net.buses().iter().map(|b| b.v_max).collect(),
            flow_max: net.flow_lines().iter().map(|&k| net.lines()[k].flow_max).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfoState {
    /// [p per generator; v per generator].
    pub u: Vec<f64>,
    pub measurement: Option<Measurement>,
    pub sensitivity: Option<SensitivityMatrix>,
    pub active: bool,
    pub iterations: usize,
}

impl OfoState {
    pub fn new(u: Vec<f64>) -> Self {
        Self { u, measurement: None, sensitivity: None, active: false, iterations: 0 }
    }

    pub fn n_gen(&self) -> usize {
        self.u.len() / 2
    }
}

/// Outcome of one controller update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateReport {
    pub softened: bool,
    pub status: QpStatus,
    /// Largest output-constraint slack needed (zero when not softened).
    pub max_slack: f64,
}

/// Φ(y) = (v_a − v_b)² + Δθ².
pub fn objective(m: &Measurement) -> f64 {
    let (a, b) = m.monitored;
    (m.v[a] - m.v[b]).powi(2) + m.delta_theta.powi(2)
}

/// ∇Φ over the entries of [`Measurement::to_vector`].
pub fn objective_gradient(m: &Measurement) -> Vec<f64> {
    let (a, b) = m.monitored;
    let mut grad = vec![0.0; m.len()];
    let dv = m.v[a] - m.v[b];
    grad[a] += 2.0 * dv;
    grad[b] -= 2.0 * dv;
    grad[m.angle_row()] = 2.0 * m.delta_theta;
    grad
}

fn check_dims(limits: &OutputLimits, st: &OfoState, m: &Measurement, s: &SensitivityMatrix) -> Result<()> {
    let n_u = st.u.len();
    let ok = n_u.is_multiple_of(2)
        && s.n_inputs() == n_u
        && s.n_outputs() == m.len()
        && limits.v_min.len() == m.v.len()
        && limits.v_max.len() == m.v.len()
        && limits.flow_max.len() == m.flows.len();
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "controller dimensions disagree: {} inputs, {} outputs, sensitivity {}x{}",
            n_u,
            m.len(),
            s.n_outputs(),
            s.n_inputs()
        )))
    }
}

/// Hard projection QP at the stored measurement and sensitivity. Rows are
/// ordered: input upper, input lower, voltage upper, voltage lower, flow.
pub fn assemble_projection_qp(cfg: &OfoConfig, limits: &OutputLimits, st: &OfoState) -> Result<QpProblem> {
    let (Some(m), Some(s)) = (&st.measurement, &st.sensitivity) else {
        return Err(Error::Config("controller has no measurement or sensitivity yet".into()));
    };
    check_dims(limits, st, m, s)?;
    let n_u = st.u.len();
    let n_bus = m.v.len();
    let n_flow = m.flows.len();
    let alpha = cfg.alpha;
    let grad = objective_gradient(m);
    let g: Vec<f64> = (0..n_u).map(|c| (0..m.len()).map(|r| s.matrix[(r, c)] * grad[r]).sum()).collect();

    let (lo, hi) = cfg.input_bounds(st.n_gen());
    let rows = 2 * n_u + 2 * n_bus + n_flow;
    let mut gm = DMatrix::zeros(rows, n_u);
    let mut h = Vec::with_capacity(rows);
    for i in 0..n_u {
        gm[(i, i)] = alpha;
        h.push(hi[i] - st.u[i]);
    }
    for i in 0..n_u {
        gm[(n_u + i, i)] = -alpha;
        h.push(st.u[i] - lo[i]);
    }
    let base = 2 * n_u;
    for k in 0..n_bus {
        for c in 0..n_u {
            gm[(base + k, c)] = alpha * s.matrix[(k, c)];
        }
        h.push(limits.v_max[k] - m.v[k]);
    }
    for k in 0..n_bus {
        for c in 0..n_u {
            gm[(base + n_bus + k, c)] = -alpha * s.matrix[(k, c)];
        }
        h.push(m.v[k] - limits.v_min[k]);
    }
    for k in 0..n_flow {
        for c in 0..n_u {
            gm[(base + 2 * n_bus + k, c)] = alpha * s.matrix[(n_bus + k, c)];
        }
        h.push(limits.flow_max[k] - m.flows[k]);
    }
    QpProblem::new(g, gm, h)
}

/// Appends one scaled slack per output row: with s' = √ρ·s the objective
/// stays ‖[w; s'] + [g; 0]‖² = ‖w + g‖² + ρ‖s‖².
fn soften(p: &QpProblem, n_input_rows: usize, rho: f64) -> QpProblem {
    let n = p.dim();
    let m = p.n_constraints();
    let n_out = m - n_input_rows;
    let scale = 1.0 / rho.sqrt();
    let mut gm = DMatrix::zeros(m + n_out, n + n_out);
    gm.view_mut((0, 0), (m, n)).copy_from(&p.g_ineq);
    for k in 0..n_out {
        gm[(n_input_rows + k, n + k)] = -scale;
        gm[(m + k, n + k)] = -1.0;
    }
    let mut g = p.g.clone();
    g.extend(std::iter::repeat_n(0.0, n_out));
    let mut h = p.h_ineq.clone();
    h.extend(std::iter::repeat_n(0.0, n_out));
    QpProblem { g, g_ineq: gm, h_ineq: h }
}

/// One controller step at measurement `y_m` with sensitivity `sens`.
pub fn ofo_update(
    cfg: &OfoConfig,
    limits: &OutputLimits,
    st: &OfoState,
    y_m: &Measurement,
    sens: &SensitivityMatrix,
) -> Result<(OfoState, UpdateReport)> {
    let mut next = st.clone();
    next.measurement = Some(y_m.clone());
    next.sensitivity = Some(sens.clone());
    let hard = assemble_projection_qp(cfg, limits, &next)?;
    let n_u = st.u.len();
    let mut sol = qp_solve(&hard)?;
    let mut report = UpdateReport { softened: false, status: sol.status, max_slack: 0.0 };
    if sol.status != QpStatus::Optimal {
        let soft = soften(&hard, 2 * n_u, cfg.rho);
        sol = qp_solve(&soft)?;
        if sol.status == QpStatus::Infeasible {
            return Err(Error::Config("input bounds exclude the current set-point".into()));
        }
        let scale = 1.0 / cfg.rho.sqrt();
        report = UpdateReport {
            softened: true,
            status: sol.status,
            max_slack: sol.w[n_u..].iter().fold(0.0, |m, s| m.max(s * scale)),
        };
    }
    let (lo, hi) = cfg.input_bounds(st.n_gen());
    for i in 0..n_u {
        next.u[i] = (st.u[i] + cfg.alpha * sol.w[i]).clamp(lo[i], hi[i]);
    }
    // tight input rows land exactly on their bound
    for &j in sol.active_set.iter().filter(|&&j| j < 2 * n_u) {
        next.u[j % n_u] = if j < n_u { hi[j] } else { lo[j - n_u] };
    }
    next.iterations += 1;
    Ok((next, report))
}
