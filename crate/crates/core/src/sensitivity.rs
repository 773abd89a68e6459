//! Steady-state input-to-output sensitivities of the power flow map.
//!
//! Inputs are u = [p per generator; v per generator] where p is the active
//! power set-point in the generator's own per-unit base (`p_scale[g]`
//! converts it to the system base) and v the terminal voltage set-point.
//! Outputs follow [`Measurement::to_vector`]: bus magnitudes, flow-line
//! apparent powers, and the monitored angle difference.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::network::{
    build_ybus, ds_dv, solve_power_flow, BusKind, NetworkModel, PfIndexing, PowerFlowSolution,
};

const J: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Topology {
    #[default]
    Nominal,
    /// One additional line taken out of service.
    Removed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMatrix {
    /// (n_bus + n_flow + 1) × 2·n_gen.
    pub matrix: DMatrix<f64>,
    pub topology: Topology,
    /// Bus voltages of the operating point the matrix was taken at.
    pub operating_point: Vec<Complex64>,
}

impl SensitivityMatrix {
    pub fn n_outputs(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.matrix.ncols()
    }

    /// CSV with a header of input names and one labelled row per output.
    pub fn to_csv(&self, net: &NetworkModel) -> String {
        let mut out = String::from("output");
        for g in net.generators() {
            let _ = write!(out, ",p_{}", g.machine);
        }
        for g in net.generators() {
            let _ = write!(out, ",v_{}", g.machine);
        }
        out.push('\n');
        let mut labels: Vec<String> = net.buses().iter().map(|b| format!("v_{}", b.id)).collect();
        labels.extend(net.flow_lines().iter().map(|&k| format!("flow_{}", net.lines()[k].id)));
        let (a, b) = net.monitored_pair();
        labels.push(format!("dtheta_{a}_{b}"));
        for (r, label) in labels.iter().enumerate() {
            out.push_str(label);
            for c in 0..self.n_inputs() {
                let _ = write!(out, ",{:e}", self.matrix[(r, c)]);
            }
            out.push('\n');
        }
        out
    }
}

/// Implicit differentiation of the power flow at a converged solution.
///
/// The slack bus absorbs every active-power change, so the slack
/// generator's p column is zero.
pub fn compute_sensitivity(
    net: &NetworkModel,
    op: &PowerFlowSolution,
    p_scale: &[f64],
) -> Result<SensitivityMatrix> {
    let n = net.n_bus();
    let ng = net.n_gen();
    if op.v.len() != n || op.theta.len() != n || p_scale.len() != ng {
        return Err(Error::Config("operating point or scale dimensions do not match the grid".into()));
    }
    let ybus = build_ybus(net)?;
    let v = op.voltages();
    let idx = PfIndexing::new(net);
    let npvpq = idx.pvpq.len();
    let (ds_da, ds_dm) = ds_dv(&ybus, &v);
    let jac = idx.jacobian(&ds_da, &ds_dm);

    let gen_bus = net.gen_bus_indices();
    // dF/dparam for [P_g; V_g]; F = S_calc − S_spec on [P(pvpq); Q(pq)]
    let mut rhs = DMatrix::<f64>::zeros(idx.dim(), 2 * ng);
    let row_of_pvpq = |bus: usize| idx.pvpq.iter().position(|&k| k == bus);
    for (g, &bus) in gen_bus.iter().enumerate() {
        if net.buses()[bus].kind != BusKind::Slack {
            let r = row_of_pvpq(bus).expect("PV bus is a pvpq row");
            rhs[(r, g)] = -p_scale[g];
        }
        for (r, &i) in idx.pvpq.iter().enumerate() {
            rhs[(r, ng + g)] = ds_dm[(i, bus)].re;
        }
        for (r, &i) in idx.pq.iter().enumerate() {
            rhs[(npvpq + r, ng + g)] = ds_dm[(i, bus)].im;
        }
    }
    let lu = jac.lu();
    let dx = lu.solve(&(-rhs)).ok_or(Error::SingularJacobian)?;
    if dx.iter().any(|x| !x.is_finite()) {
        return Err(Error::SingularJacobian);
    }

    let n_flow = net.flow_lines().len();
    let mut matrix = DMatrix::<f64>::zeros(n + n_flow + 1, 2 * ng);
    let (a, b) = net.monitored_indices();
    for c in 0..2 * ng {
        let mut dth = vec![0.0; n];
        let mut dm = vec![0.0; n];
        for (r, &i) in idx.pvpq.iter().enumerate() {
            dth[i] = dx[(r, c)];
        }
        for (r, &i) in idx.pq.iter().enumerate() {
            dm[i] = dx[(npvpq + r, c)];
        }
        if c >= ng {
            dm[gen_bus[c - ng]] = 1.0;
        }
        let dv: Vec<Complex64> = (0..n)
            .map(|k| J * v[k] * dth[k] + Complex64::from_polar(dm[k], op.theta[k]))
            .collect();
        for k in 0..n {
            matrix[(k, c)] = dm[k];
        }
        for (r, &li) in net.flow_lines().iter().enumerate() {
            let line = &net.lines()[li];
            if !line.in_service {
                continue;
            }
            let f = net.bus_index(line.from_bus).expect("validated");
            let t = net.bus_index(line.to_bus).expect("validated");
            let ys = line.series_admittance();
            let ysh = J * (line.b_charging / 2.0);
            let i = (v[f] - v[t]) * ys + v[f] * ysh;
            let s = v[f] * i.conj();
            let di = (dv[f] - dv[t]) * ys + dv[f] * ysh;
            let ds = dv[f] * i.conj() + v[f] * di.conj();
            let mag = s.norm();
            if mag > 1e-12 {
                matrix[(n + r, c)] = (s.conj() * ds).re / mag;
            }
        }
        matrix[(n + n_flow, c)] = dth[a] - dth[b];
    }
    Ok(SensitivityMatrix { matrix, topology: Topology::Nominal, operating_point: v })
}

/// Sensitivity of a copy of `net` with `removed_line` out of service, taken
/// at that copy's own power flow solution for the same set-points.
pub fn perturbed_sensitivity(
    net: &NetworkModel,
    removed_line: usize,
    gen_p: &[f64],
    gen_v: &[f64],
    warm_start: Option<&PowerFlowSolution>,
    p_scale: &[f64],
) -> Result<SensitivityMatrix> {
    let copy = net.with_line_removed(removed_line)?;
    copy.check_connected()?;
    let op = solve_power_flow(&copy, gen_p, gen_v, warm_start)?;
    let mut s = compute_sensitivity(&copy, &op, p_scale)?;
    s.topology = Topology::Removed(removed_line);
    Ok(s)
}
