//! Static grid model, bus admittance matrix, Newton-Raphson AC power flow
//! and measurement extraction.
//!
//! All electrical quantities are per-unit on the system base
//! (`base_power`, MVA) with angles in radians.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const J: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BusKind {
    #[serde(rename = "slack")]
    Slack,
    PV,
    PQ,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    #[serde(default)]
    pub load_p: f64,
    #[serde(default)]
    pub load_q: f64,
    #[serde(default)]
    pub shunt_b: f64,
    pub v_min: f64,
    pub v_max: f64,
}

/// A series branch with pi-model charging. Transformers are carried as
/// ordinary branches (no tap or phase shift) and flagged so that they are
/// excluded from the monitored line flows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: usize,
    pub from_bus: usize,
    pub to_bus: usize,
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b_charging: f64,
    pub flow_max: f64,
    #[serde(default = "default_true")]
    pub in_service: bool,
    #[serde(default)]
    pub transformer: bool,
}

fn default_true() -> bool {
    true
}

impl Line {
    pub fn series_admittance(&self) -> Complex64 {
        Complex64::new(self.r, self.x).inv()
    }

    /// Complex power entering the line at its from-end.
    pub fn from_end_power(&self, v_from: Complex64, v_to: Complex64) -> Complex64 {
        let i = (v_from - v_to) * self.series_admittance() + v_from * J * (self.b_charging / 2.0);
        v_from * i.conj()
    }
}

/// Generator placement plus its base-case dispatch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenLocation {
    pub bus: usize,
    pub machine: usize,
    /// Scheduled active power, p.u. on the system base.
    #[serde(default)]
    pub p_set: f64,
    /// Terminal voltage set-point, p.u.
    #[serde(default = "unit")]
    pub v_set: f64,
}

fn unit() -> f64 {
    1.0
}

/// Validated static grid description.
///
/// Buses, lines and generators keep their file order; internal indices
/// used throughout the crate are positions in these vectors.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    buses: Vec<Bus>,
    lines: Vec<Line>,
    generators: Vec<GenLocation>,
    base_power: f64,
    monitored_pair: (usize, usize),
    bus_index: HashMap<usize, usize>,
    slack: usize,
    flow_lines: Vec<usize>,
}

impl NetworkModel {
    pub fn new(
        buses: Vec<Bus>,
        lines: Vec<Line>,
        generators: Vec<GenLocation>,
        base_power: f64,
        monitored_pair: (usize, usize),
    ) -> Result<Self> {
        let invalid = |msg: String| Err(Error::InvalidModel(msg));
        if buses.is_empty() {
            return invalid("no buses".into());
        }
        if !(base_power.is_finite() && base_power > 0.0) {
            return invalid(format!("base_mva must be positive, got {base_power}"));
        }
        let mut bus_index = HashMap::with_capacity(buses.len());
        for (k, b) in buses.iter().enumerate() {
            if bus_index.insert(b.id, k).is_some() {
                return invalid(format!("duplicate bus id {}", b.id));
            }
            if !(b.load_p.is_finite() && b.load_q.is_finite() && b.shunt_b.is_finite()) {
                return invalid(format!("bus {} has non-finite load or shunt", b.id));
            }
            if !(b.v_min.is_finite() && b.v_max.is_finite() && b.v_min < b.v_max) {
                return invalid(format!("bus {} needs v_min < v_max", b.id));
            }
        }
        let slacks: Vec<usize> = (0..buses.len())
            .filter(|&k| buses[k].kind == BusKind::Slack)
            .collect();
        if slacks.len() != 1 {
            return invalid(format!("expected exactly one slack bus, found {}", slacks.len()));
        }
        let mut line_ids = HashMap::new();
        for l in &lines {
            if line_ids.insert(l.id, ()).is_some() {
                return invalid(format!("duplicate line id {}", l.id));
            }
            for end in [l.from_bus, l.to_bus] {
                if !bus_index.contains_key(&end) {
                    return invalid(format!("line {} references unknown bus {end}", l.id));
                }
            }
            if l.from_bus == l.to_bus {
                return invalid(format!("line {} is a self-loop", l.id));
            }
            if ![l.r, l.x, l.b_charging, l.flow_max].iter().all(|v| v.is_finite()) {
                return invalid(format!("line {} has non-finite parameters", l.id));
            }
            if l.in_service && l.x == 0.0 {
                return invalid(format!("line {} has x = 0", l.id));
            }
            if l.flow_max <= 0.0 {
                return invalid(format!("line {} needs flow_max > 0", l.id));
            }
        }
        let mut gen_buses = HashMap::new();
        for g in &generators {
            let Some(&k) = bus_index.get(&g.bus) else {
                return invalid(format!("generator {} at unknown bus {}", g.machine, g.bus));
            };
            if buses[k].kind == BusKind::PQ {
                return invalid(format!("generator {} sits on PQ bus {}", g.machine, g.bus));
            }
            if gen_buses.insert(g.bus, ()).is_some() {
                return invalid(format!("more than one generator on bus {}", g.bus));
            }
            if !(g.p_set.is_finite() && g.v_set.is_finite() && g.v_set > 0.0) {
                return invalid(format!("generator {} has an invalid set-point", g.machine));
            }
        }
        for (k, b) in buses.iter().enumerate() {
            if b.kind != BusKind::PQ && !gen_buses.contains_key(&b.id) {
                return invalid(format!("bus {} is {:?} but has no generator", b.id, buses[k].kind));
            }
        }
        let (a, b) = monitored_pair;
        let (Some(&ia), Some(&ib)) = (bus_index.get(&a), bus_index.get(&b)) else {
            return invalid(format!("monitored pair ({a}, {b}) references unknown buses"));
        };
        if ia == ib {
            return invalid("monitored pair must name two distinct buses".into());
        }
        let flow_lines = (0..lines.len()).filter(|&k| !lines[k].transformer).collect();
        Ok(Self {
            slack: slacks[0],
            buses,
            lines,
            generators,
            base_power,
            monitored_pair,
            bus_index,
            flow_lines,
        })
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn generators(&self) -> &[GenLocation] {
        &self.generators
    }

    pub fn base_power(&self) -> f64 {
        self.base_power
    }

    /// Monitored bus ids (breaker endpoints).
    pub fn monitored_pair(&self) -> (usize, usize) {
        self.monitored_pair
    }

    /// Monitored pair as internal bus indices.
    pub fn monitored_indices(&self) -> (usize, usize) {
        (
            self.bus_index[&self.monitored_pair.0],
            self.bus_index[&self.monitored_pair.1],
        )
    }

    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    pub fn n_gen(&self) -> usize {
        self.generators.len()
    }

    pub fn slack_index(&self) -> usize {
        self.slack
    }

    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.bus_index.get(&id).copied()
    }

    pub fn line_index(&self, id: usize) -> Option<usize> {
        self.lines.iter().position(|l| l.id == id)
    }

    /// Internal bus index of every generator, in generator order.
    pub fn gen_bus_indices(&self) -> Vec<usize> {
        self.generators.iter().map(|g| self.bus_index[&g.bus]).collect()
    }

    /// Indices (into `lines()`) of the branches whose flows are measured:
    /// every non-transformer branch, in file order.
    pub fn flow_lines(&self) -> &[usize] {
        &self.flow_lines
    }

    pub fn set_line_in_service(&mut self, line_id: usize, in_service: bool) -> Result<()> {
        let k = self
            .line_index(line_id)
            .ok_or_else(|| Error::Config(format!("unknown line id {line_id}")))?;
        self.lines[k].in_service = in_service;
        Ok(())
    }

    /// Copy of the model with `line_id` taken out of service.
    pub fn with_line_removed(&self, line_id: usize) -> Result<Self> {
        let mut net = self.clone();
        net.set_line_in_service(line_id, false)?;
        Ok(net)
    }

    /// Same grid observed across a different bus pair.
    pub fn with_monitored_pair(&self, pair: (usize, usize)) -> Result<Self> {
        Self::new(
            self.buses.clone(),
            self.lines.clone(),
            self.generators.clone(),
            self.base_power,
            pair,
        )
    }

    /// Scheduled dispatch and voltage set-points of the generators.
    pub fn scheduled_setpoints(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.generators.iter().map(|g| g.p_set).collect(),
            self.generators.iter().map(|g| g.v_set).collect(),
        )
    }

    /// Connected components of the in-service branch graph, as sorted
    /// internal bus indices. The component holding the slack bus comes first.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.n_bus();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for l in self.lines.iter().filter(|l| l.in_service) {
            let a = find(&mut parent, self.bus_index[&l.from_bus]);
            let b = find(&mut parent, self.bus_index[&l.to_bus]);
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut root_slot: HashMap<usize, usize> = HashMap::new();
        for k in 0..n {
            let r = find(&mut parent, k);
            let slot = *root_slot.entry(r).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[slot].push(k);
        }
        let slack = self.slack;
        groups.sort_by_key(|g| (!g.contains(&slack), g[0]));
        groups
    }

    /// Fails with the bus ids of the first component cut off from the slack.
    pub fn check_connected(&self) -> Result<()> {
        let comps = self.components();
        if comps.len() > 1 {
            let component = comps[1].iter().map(|&k| self.buses[k].id).collect();
            return Err(Error::Islanding { component });
        }
        Ok(())
    }
}

/// Assembles the complex bus admittance matrix.
pub fn build_ybus(net: &NetworkModel) -> Result<DMatrix<Complex64>> {
    let n = net.n_bus();
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    for (k, b) in net.buses().iter().enumerate() {
        y[(k, k)] += J * b.shunt_b;
    }
    for l in net.lines().iter().filter(|l| l.in_service) {
        if l.x == 0.0 {
            return Err(Error::DegenerateLine { line: l.id });
        }
        let f = net.bus_index[&l.from_bus];
        let t = net.bus_index[&l.to_bus];
        let ys = l.series_admittance();
        let half_b = J * (l.b_charging / 2.0);
        y[(f, f)] += ys + half_b;
        y[(t, t)] += ys + half_b;
        y[(f, t)] -= ys;
        y[(t, f)] -= ys;
    }
    Ok(y)
}

/// Steady-state bus voltages and injections.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    pub p_inj: Vec<f64>,
    pub q_inj: Vec<f64>,
    pub converged: bool,
    pub residual: f64,
    pub iterations: usize,
}

impl PowerFlowSolution {
    /// All magnitudes 1, all angles 0.
    pub fn flat(n_bus: usize) -> Self {
        Self {
            v: vec![1.0; n_bus],
            theta: vec![0.0; n_bus],
            p_inj: vec![0.0; n_bus],
            q_inj: vec![0.0; n_bus],
            converged: false,
            residual: f64::INFINITY,
            iterations: 0,
        }
    }

    pub fn voltages(&self) -> Vec<Complex64> {
        self.v
            .iter()
            .zip(&self.theta)
            .map(|(&m, &a)| Complex64::from_polar(m, a))
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PowerFlowOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 50,
        }
    }
}

/// Bus power injections S = V conj(Y V).
pub fn bus_injections(ybus: &DMatrix<Complex64>, v: &[Complex64]) -> Vec<Complex64> {
    let vv = DVector::from_column_slice(v);
    let i = ybus * &vv;
    v.iter().zip(i.iter()).map(|(vk, ik)| vk * ik.conj()).collect()
}

/// Partial derivatives of the bus injections with respect to voltage
/// angles and magnitudes: (dS/dθ, dS/d|V|).
pub fn ds_dv(
    ybus: &DMatrix<Complex64>,
    v: &[Complex64],
) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let n = v.len();
    let vv = DVector::from_column_slice(v);
    let ibus = ybus * &vv;
    let vnorm: Vec<Complex64> = v.iter().map(|x| x / x.norm()).collect();
    let mut ds_da = DMatrix::zeros(n, n);
    let mut ds_dm = DMatrix::zeros(n, n);
    for i in 0..n {
        for k in 0..n {
            let yik = ybus[(i, k)];
            ds_dm[(i, k)] = v[i] * (yik * vnorm[k]).conj();
            ds_da[(i, k)] = -J * v[i] * (yik * v[k]).conj();
        }
        ds_dm[(i, i)] += ibus[i].conj() * vnorm[i];
        ds_da[(i, i)] += J * v[i] * ibus[i].conj();
    }
    (ds_da, ds_dm)
}

/// Index bookkeeping shared by the Newton solver and the sensitivity code.
pub(crate) struct PfIndexing {
    /// Non-slack buses (angle unknowns), in bus order.
    pub pvpq: Vec<usize>,
    /// PQ buses (magnitude unknowns), in bus order.
    pub pq: Vec<usize>,
}

impl PfIndexing {
    pub fn new(net: &NetworkModel) -> Self {
        let buses = net.buses();
        Self {
            pvpq: (0..buses.len()).filter(|&k| buses[k].kind != BusKind::Slack).collect(),
            pq: (0..buses.len()).filter(|&k| buses[k].kind == BusKind::PQ).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.pvpq.len() + self.pq.len()
    }

    /// Reduced Newton Jacobian of the [P(pvpq); Q(pq)] mismatches with
    /// respect to [θ(pvpq); |V|(pq)].
    pub fn jacobian(&self, ds_da: &DMatrix<Complex64>, ds_dm: &DMatrix<Complex64>) -> DMatrix<f64> {
        let (a, b) = (self.pvpq.len(), self.pq.len());
        let mut jac = DMatrix::zeros(a + b, a + b);
        for (r, &i) in self.pvpq.iter().enumerate() {
            for (c, &k) in self.pvpq.iter().enumerate() {
                jac[(r, c)] = ds_da[(i, k)].re;
            }
            for (c, &k) in self.pq.iter().enumerate() {
                jac[(r, a + c)] = ds_dm[(i, k)].re;
            }
        }
        for (r, &i) in self.pq.iter().enumerate() {
            for (c, &k) in self.pvpq.iter().enumerate() {
                jac[(a + r, c)] = ds_da[(i, k)].im;
            }
            for (c, &k) in self.pq.iter().enumerate() {
                jac[(a + r, a + c)] = ds_dm[(i, k)].im;
            }
        }
        jac
    }
}

/// Specified net injections (generation minus load) per bus.
fn specified_injections(net: &NetworkModel, gen_p: &[f64]) -> Vec<Complex64> {
    let mut s: Vec<Complex64> = net
        .buses()
        .iter()
        .map(|b| Complex64::new(-b.load_p, -b.load_q))
        .collect();
    for (g, &bus) in net.gen_bus_indices().iter().enumerate() {
        s[bus].re += gen_p[g];
    }
    s
}

/// Newton-Raphson power flow with default tolerance (1e-8 p.u.) and
/// iteration cap (50).
pub fn solve_power_flow(
    net: &NetworkModel,
    gen_p: &[f64],
    gen_v: &[f64],
    warm_start: Option<&PowerFlowSolution>,
) -> Result<PowerFlowSolution> {
    solve_power_flow_with(net, gen_p, gen_v, warm_start, PowerFlowOptions::default())
}

pub fn solve_power_flow_with(
    net: &NetworkModel,
    gen_p: &[f64],
    gen_v: &[f64],
    warm_start: Option<&PowerFlowSolution>,
    opts: PowerFlowOptions,
) -> Result<PowerFlowSolution> {
    let n = net.n_bus();
    if gen_p.len() != net.n_gen() || gen_v.len() != net.n_gen() {
        return Err(Error::Config(format!(
            "expected {} generator set-points, got p: {}, v: {}",
            net.n_gen(),
            gen_p.len(),
            gen_v.len()
        )));
    }
    let ybus = build_ybus(net)?;
    let idx = PfIndexing::new(net);
    let s_spec = specified_injections(net, gen_p);

    let (mut vm, mut va) = match warm_start {
        Some(w) if w.v.len() == n && w.theta.len() == n => (w.v.clone(), w.theta.clone()),
        _ => (vec![1.0; n], vec![0.0; n]),
    };
    for (g, &bus) in net.gen_bus_indices().iter().enumerate() {
        vm[bus] = gen_v[g];
    }
    let slack = net.slack_index();
    let offset = va[slack];
    va.iter_mut().for_each(|a| *a -= offset);

    let npvpq = idx.pvpq.len();
    let mismatch = |vm: &[f64], va: &[f64]| {
        let v: Vec<Complex64> = vm.iter().zip(va).map(|(&m, &a)| Complex64::from_polar(m, a)).collect();
        let s_calc = bus_injections(&ybus, &v);
        let mut f = DVector::zeros(idx.dim());
        for (r, &i) in idx.pvpq.iter().enumerate() {
            f[r] = s_calc[i].re - s_spec[i].re;
        }
        for (r, &i) in idx.pq.iter().enumerate() {
            f[npvpq + r] = s_calc[i].im - s_spec[i].im;
        }
        (v, s_calc, f)
    };
    let (mut v, mut s_calc, mut f) = mismatch(&vm, &va);
    let mut iterations = 0;
    loop {
        let residual = f.amax();
        if !residual.is_finite() {
            return Err(Error::PowerFlowDiverged { iterations, residual });
        }
        if residual <= opts.tolerance {
            return Ok(PowerFlowSolution {
                v: vm,
                theta: va,
                p_inj: s_calc.iter().map(|s| s.re).collect(),
                q_inj: s_calc.iter().map(|s| s.im).collect(),
                converged: true,
                residual,
                iterations,
            });
        }
        if iterations >= opts.max_iterations {
            return Err(Error::PowerFlowDiverged { iterations, residual });
        }
        let (ds_da, ds_dm) = ds_dv(&ybus, &v);
        let jac = idx.jacobian(&ds_da, &ds_dm);
        let dx = jac.lu().solve(&f).ok_or(Error::SingularJacobian)?;
        // Backtrack on the mismatch norm; a full step is taken whenever it helps.
        let norm = f.norm();
        let mut step = 1.0;
        loop {
            let (mut vm_t, mut va_t) = (vm.clone(), va.clone());
            for (r, &i) in idx.pvpq.iter().enumerate() {
                va_t[i] -= step * dx[r];
            }
            for (r, &i) in idx.pq.iter().enumerate() {
                vm_t[i] -= step * dx[npvpq + r];
            }
            let trial = mismatch(&vm_t, &va_t);
            let better = trial.2.norm() < norm;
            if better || step < 1e-3 {
                (vm, va) = (vm_t, va_t);
                (v, s_calc, f) = trial;
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
    }
}

/// Controller-side measurement vector y = [v; flows; Δθ].
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    /// Bus voltage magnitudes, bus order.
    pub v: Vec<f64>,
    /// Apparent-power magnitudes at the from-end of each flow line.
    pub flows: Vec<f64>,
    /// θ_a − θ_b across the monitored pair, wrapped to (−π, π].
    pub delta_theta: f64,
    pub timestamp: f64,
    /// Internal indices of the monitored pair.
    pub monitored: (usize, usize),
}

impl Measurement {
    pub fn len(&self) -> usize {
        self.v.len() + self.flows.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn to_vector(&self) -> Vec<f64> {
        let mut y = Vec::with_capacity(self.len());
        y.extend_from_slice(&self.v);
        y.extend_from_slice(&self.flows);
        y.push(self.delta_theta);
        y
    }

    /// Row of the Δθ entry in `to_vector()`.
    pub fn angle_row(&self) -> usize {
        self.v.len() + self.flows.len()
    }
}

pub(crate) fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Measurement from a set of complex bus voltages (a power-flow solution or
/// the algebraic state of the dynamic network).
pub fn extract_measurement(net: &NetworkModel, voltages: &[Complex64], t: f64) -> Measurement {
    let v = voltages.iter().map(|x| x.norm()).collect();
    let flows = net
        .flow_lines()
        .iter()
        .map(|&k| {
            let l = &net.lines()[k];
            if !l.in_service {
                return 0.0;
            }
            let f = net.bus_index[&l.from_bus];
            let to = net.bus_index[&l.to_bus];
            l.from_end_power(voltages[f], voltages[to]).norm()
        })
        .collect();
    let (a, b) = net.monitored_indices();
    Measurement {
        v,
        flows,
        delta_theta: wrap_angle(voltages[a].arg() - voltages[b].arg()),
        timestamp: t,
        monitored: (a, b),
    }
}

/// |v_a e^{jθ_a} − v_b e^{jθ_b}| across the monitored pair.
pub fn complex_voltage_gap(m: &Measurement) -> f64 {
    let (a, b) = m.monitored;
    (Complex64::from_polar(m.v[a], m.delta_theta) - Complex64::new(m.v[b], 0.0)).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub(crate) fn two_bus(load_p: f64, load_q: f64, r: f64, x: f64) -> NetworkModel {
        NetworkModel::new(
            vec![
                Bus { id: 1, kind: BusKind::Slack, load_p: 0.0, load_q: 0.0, shunt_b: 0.0, v_min: 0.9, v_max: 1.1 },
                Bus { id: 2, kind: BusKind::PQ, load_p, load_q, shunt_b: 0.0, v_min: 0.9, v_max: 1.1 },
            ],
            vec![Line { id: 1, from_bus: 1, to_bus: 2, r, x, b_charging: 0.0, flow_max: 5.0, in_service: true, transformer: false }],
            vec![GenLocation { bus: 1, machine: 1, p_set: 0.0, v_set: 1.0 }],
            100.0,
            (1, 2),
        )
        .unwrap()
    }

    #[test]
    fn two_bus_ybus_entries() {
        let net = two_bus(0.0, 0.0, 0.0, 0.1);
        let y = build_ybus(&net).unwrap();
        assert_abs_diff_eq!(y[(0, 1)].im, 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y[(0, 1)].re, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y[(0, 0)].im, -10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y[(1, 1)].im, -10.0, epsilon = 1e-12);
    }

    #[test]
    fn out_of_service_line_contributes_nothing() {
        let mut net = two_bus(0.0, 0.0, 0.0, 0.1);
        net.set_line_in_service(1, false).unwrap();
        let y = build_ybus(&net).unwrap();
        assert!(y.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn zero_impedance_line_is_rejected() {
        let mut net = two_bus(0.0, 0.0, 0.0, 0.1);
        net.lines[0].x = 0.0;
        assert!(matches!(build_ybus(&net), Err(Error::DegenerateLine { line: 1 })));
    }

    #[test]
    fn validation_rejects_bad_models() {
        let net = two_bus(0.0, 0.0, 0.0, 0.1);
        let mut buses = net.buses().to_vec();
        buses[1].kind = BusKind::Slack;
        let r = NetworkModel::new(buses, net.lines().to_vec(), net.generators().to_vec(), 100.0, (1, 2));
        assert!(r.is_err());

        let mut lines = net.lines().to_vec();
        lines[0].to_bus = 7;
        let r = NetworkModel::new(net.buses().to_vec(), lines, net.generators().to_vec(), 100.0, (1, 2));
        assert!(r.is_err());

        let r = NetworkModel::new(net.buses().to_vec(), net.lines().to_vec(), net.generators().to_vec(), 100.0, (1, 9));
        assert!(r.is_err());

        let mut buses = net.buses().to_vec();
        buses[1].v_min = 1.2;
        let r = NetworkModel::new(buses, net.lines().to_vec(), net.generators().to_vec(), 100.0, (1, 2));
        assert!(r.is_err());
    }

    #[test]
    fn flat_no_load_solution() {
        let net = two_bus(0.0, 0.0, 0.01, 0.1);
        let sol = solve_power_flow(&net, &[0.0], &[1.0], None).unwrap();
        assert!(sol.converged);
        for k in 0..2 {
            assert_abs_diff_eq!(sol.v[k], 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(sol.theta[k], 0.0, epsilon = 1e-12);
        }
        let m = extract_measurement(&net, &sol.voltages(), 0.0);
        assert!(m.flows.iter().all(|&f| f.abs() < 1e-12));
        assert_abs_diff_eq!(m.delta_theta, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(complex_voltage_gap(&m), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn two_bus_matches_closed_form() {
        // Lossless line, PQ load P + jQ at the receiving end, V1 = 1:
        // V^4 + (2QX - 1) V^2 + X^2 (P^2 + Q^2) = 0 (upper root).
        let (p, q, x) = (0.8, 0.3, 0.2);
        let net = two_bus(p, q, 0.0, x);
        let sol = solve_power_flow(&net, &[0.0], &[1.0], None).unwrap();
        let bq = 2.0 * q * x - 1.0;
        let c = x * x * (p * p + q * q);
        let v2 = ((-bq + (bq * bq - 4.0 * c).sqrt()) / 2.0).sqrt();
        assert_abs_diff_eq!(sol.v[1], v2, epsilon = 1e-9);
        // sin(θ2) = −P X / V2
        assert_abs_diff_eq!(sol.theta[1], (-p * x / v2).asin(), epsilon = 1e-9);
        // slack absorbs the load
        assert_abs_diff_eq!(sol.p_inj[0], p, epsilon = 1e-8);
    }

    #[test]
    fn two_bus_flow_matches_branch_equation() {
        let (r, x) = (0.02, 0.15);
        let net = two_bus(0.6, 0.2, r, x);
        let sol = solve_power_flow(&net, &[0.0], &[1.0], None).unwrap();
        let v = sol.voltages();
        let m = extract_measurement(&net, &v, 1.5);
        let z = Complex64::new(r, x);
        let expected = (v[0] * ((v[0] - v[1]) / z).conj()).norm();
        assert_abs_diff_eq!(m.flows[0], expected, epsilon = 1e-12);
        assert_eq!(m.timestamp, 1.5);
    }

    #[test]
    fn reversed_pair_negates_angle() {
        let net = two_bus(0.6, 0.2, 0.02, 0.15);
        let sol = solve_power_flow(&net, &[0.0], &[1.0], None).unwrap();
        let rev = net.with_monitored_pair((2, 1)).unwrap();
        let m1 = extract_measurement(&net, &sol.voltages(), 0.0);
        let m2 = extract_measurement(&rev, &sol.voltages(), 0.0);
        assert!(m1.delta_theta.abs() > 1e-3);
        assert_abs_diff_eq!(m1.delta_theta, -m2.delta_theta, epsilon = 1e-15);
        assert_abs_diff_eq!(complex_voltage_gap(&m1), complex_voltage_gap(&m2), epsilon = 1e-12);
    }

    fn gap_of(va: f64, vb: f64, dtheta: f64) -> f64 {
        let m = Measurement { v: vec![va, vb], flows: vec![], delta_theta: dtheta, timestamp: 0.0, monitored: (0, 1) };
        complex_voltage_gap(&m)
    }

    #[test]
    fn voltage_gap_examples() {
        assert_abs_diff_eq!(gap_of(1.0, 1.0, 0.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(gap_of(1.0, 1.0, std::f64::consts::PI), 2.0, epsilon = 1e-12);
        let d = 42f64.to_radians();
        // place both phasors at arbitrary absolute angles
        let (ta, tb): (f64, f64) = (0.3 + d, 0.3);
        let direct = ((1.0 * ta.cos() - 0.95 * tb.cos()).powi(2) + (1.0 * ta.sin() - 0.95 * tb.sin()).powi(2)).sqrt();
        assert_abs_diff_eq!(gap_of(1.0, 0.95, d), direct, epsilon = 1e-12);
    }

    #[test]
    fn divergence_reports_residual() {
        // Far beyond the loadability limit of a 0.5 p.u. reactance.
        let net = two_bus(5.0, 2.0, 0.0, 0.5);
        match solve_power_flow(&net, &[0.0], &[1.0], None) {
            Err(Error::PowerFlowDiverged { residual, .. }) => assert!(residual > 1e-8),
            Err(Error::SingularJacobian) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn islanding_is_detected() {
        let mut net = two_bus(0.1, 0.0, 0.0, 0.1);
        assert!(net.check_connected().is_ok());
        net.set_line_in_service(1, false).unwrap();
        match net.check_connected() {
            Err(Error::Islanding { component }) => assert_eq!(component, vec![2]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn angle_wrap() {
        assert_abs_diff_eq!(wrap_angle(3.0 * std::f64::consts::PI / 2.0), -std::f64::consts::PI / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(-0.2), -0.2, epsilon = 1e-15);
    }
}
