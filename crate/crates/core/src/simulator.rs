//! Time-domain simulation: machine ODEs integrated with RK4 around an
//! algebraic network solve, control blocks advanced once per step, a timed
//! event engine and the sampled controller.
//!
//! The network is linear: loads are constant impedances fixed at the
//! initial power flow, and every machine is a Norton source with internal
//! admittance 1/(R + jX_d'') stamped into the bus admittance matrix.

use nalgebra::{DMatrix, DVector, Dyn, LU};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::controls::{
    agc_step, average_frequency, exciter_step, governor_step, pss_step, AgcState, ExciterState, GovernorState,
    PssState,
};
use crate::data::{steps_per, Event, EventKind, Grid, Scenario, SimConfig};
use crate::error::{Error, Result};
use crate::machines::{
    dq_currents, electrical_power, init_from_power_flow, machine_derivatives, norton_current, InitialCondition,
    MachineState,
};
use crate::network::{
    build_ybus, bus_injections, complex_voltage_gap, extract_measurement, solve_power_flow, solve_power_flow_with,
    Measurement, NetworkModel, PowerFlowOptions, PowerFlowSolution,
};
use crate::ofo::{objective, ofo_update, OfoConfig, OfoState, OutputLimits, UpdateReport};
use crate::qp::QpStatus;
use crate::sensitivity::{compute_sensitivity, Topology};

/// States larger than this are treated as numerical blow-up.
const BLOWUP: f64 = 1e6;

/// Factorized dynamic admittance matrix for one topology.
pub struct DynamicNetwork {
    y: DMatrix<Complex64>,
    lu: LU<Complex64, Dyn, Dyn>,
}

impl DynamicNetwork {
    /// `shunts` are extra admittances to ground per bus (system base).
    pub fn build(net: &NetworkModel, shunts: &[Complex64]) -> Result<Self> {
        net.check_connected()?;
        let mut y = build_ybus(net)?;
        for (k, s) in shunts.iter().enumerate() {
            y[(k, k)] += s;
        }
        Ok(Self::from_matrix(y))
    }

    pub fn from_matrix(y: DMatrix<Complex64>) -> Self {
        let lu = y.clone().lu();
        Self { y, lu }
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.y
    }
}

/// Bus voltages V = Y⁻¹·i for per-bus source currents `i`.
pub fn network_solve(dn: &DynamicNetwork, injections: &[Complex64]) -> Result<Vec<Complex64>> {
    let rhs = DVector::from_column_slice(injections);
    let v = dn.lu.solve(&rhs).ok_or(Error::SingularNetwork)?;
    if v.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
        return Err(Error::SingularNetwork);
    }
    Ok(v.iter().copied().collect())
}

/// One recorded instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub t: f64,
    pub measurement: Measurement,
    pub gap: f64,
    pub voltages: Vec<Complex64>,
    pub machines: Vec<MachineState>,
    /// Active power set-points, generator base.
    pub p_ofo: Vec<f64>,
    pub v_ofo: Vec<f64>,
    /// Mechanical and electrical power, generator base.
    pub p_m: Vec<f64>,
    pub p_e: Vec<f64>,
}

/// One controller update.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerSample {
    pub t: f64,
    /// 1-based update count.
    pub iteration: usize,
    /// Gap and objective at the measurement the update acted on.
    pub gap: f64,
    pub objective: f64,
    /// Inputs after the update.
    pub u: Vec<f64>,
    pub report: UpdateReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub t: f64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub records: Vec<Record>,
    pub samples: Vec<ControllerSample>,
    pub log: Vec<LogEntry>,
}

impl Trajectory {
    pub fn gap_at(&self, t: f64) -> Option<f64> {
        self.records.iter().find(|r| (r.t - t).abs() < 1e-9).map(|r| r.gap)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    /// Topology the controller linearizes on.
    pub topology: Topology,
    /// Seed for measurement noise.
    pub seed: u64,
}

/// Full mutable state of one simulation run.
pub struct Simulator {
    grid: Grid,
    net: NetworkModel,
    shunts: Vec<Complex64>,
    dyn_net: DynamicNetwork,
    gen_bus: Vec<usize>,
    scale: Vec<f64>,
    init: Vec<InitialCondition>,
    machines: Vec<MachineState>,
    voltages: Vec<Complex64>,
    gov: Vec<GovernorState>,
    exc: Vec<ExciterState>,
    pss: Vec<PssState>,
    agc: AgcState,
    p_ref: Vec<f64>,
    p_gov: Vec<f64>,
    p_agc: Vec<f64>,
    v_pss: Vec<f64>,
    e_f: Vec<f64>,
    p_m: Vec<f64>,
    ofo_cfg: OfoConfig,
    limits: OutputLimits,
    ofo: OfoState,
    options: RunOptions,
    pf_warm: Option<PowerFlowSolution>,
    rng: ChaCha8Rng,
    dt: f64,
    step_index: usize,
}

impl Simulator {
    /// Initializes every machine and control block at the equilibrium of
    /// the scheduled power flow.
    pub fn new(grid: &Grid, ofo_cfg: &OfoConfig, dt: f64, options: RunOptions) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Config("dt must be positive".into()));
        }
        ofo_cfg.validate()?;
        let net = grid.network.clone();
        net.check_connected()?;
        let (p_set, v_set) = net.scheduled_setpoints();
        let tight = PowerFlowOptions { tolerance: 1e-12, ..Default::default() };
        let pf = solve_power_flow_with(&net, &p_set, &v_set, None, tight)?;
        let v0 = pf.voltages();
        let ybus = build_ybus(&net)?;
        let s_calc = bus_injections(&ybus, &v0);
        let gen_bus = net.gen_bus_indices();
        let scale = grid.power_scale();
        let n = net.n_bus();

        // Loads become admittances that draw exactly the computed injection
        // at the initial voltages, so the dynamic network reproduces the
        // power flow without its residual.
        let mut shunts = vec![Complex64::new(0.0, 0.0); n];
        let mut gen_s = vec![Complex64::new(0.0, 0.0); gen_bus.len()];
        for (k, bus) in net.buses().iter().enumerate() {
            let load = Complex64::new(bus.load_p, bus.load_q);
            let vm2 = v0[k].norm_sqr();
            match gen_bus.iter().position(|&b| b == k) {
                Some(g) => {
                    shunts[k] += load.conj() / vm2;
                    gen_s[g] = s_calc[k] + load;
                }
                None => shunts[k] += -s_calc[k].conj() / vm2,
            }
        }
        let mut init = Vec::with_capacity(gen_bus.len());
        for (g, &bus) in gen_bus.iter().enumerate() {
            let p = &grid.machines[g];
            let ic = init_from_power_flow(p, v0[bus], gen_s[g] / scale[g])
                .map_err(|e| Error::Init(format!("generator at bus {}: {e}", net.buses()[bus].id)))?;
            shunts[bus] += p.internal_admittance() * scale[g];
            init.push(ic);
        }
        let dyn_net = DynamicNetwork::build(&net, &shunts)?;

        let ng = gen_bus.len();
        let p_ofo0: Vec<f64> = init.iter().map(|ic| ic.p_m0.clamp(ofo_cfg.p_min, ofo_cfg.p_max)).collect();
        let v_ofo0: Vec<f64> = gen_bus.iter().map(|&b| v0[b].norm().clamp(ofo_cfg.v_min, ofo_cfg.v_max)).collect();
        let p_ref: Vec<f64> = (0..ng).map(|g| init[g].p_m0 - p_ofo0[g]).collect();
        let gov: Vec<GovernorState> =
            (0..ng).map(|g| GovernorState::steady(&grid.governors[g], p_ref[g], 0.0)).collect();
        let p_gov = (0..ng).map(|g| gov[g].output(&grid.governors[g], 0.0)).collect();
        let exc = (0..ng).map(|g| ExciterState::steady(&grid.exciters[g], init[g].e_f0)).collect();
        let e_f = init.iter().map(|ic| ic.e_f0).collect();
        let mut u = p_ofo0;
        u.extend(v_ofo0);

        let mut sim = Self {
            grid: grid.clone(),
            limits: OutputLimits::from_network(&net),
            machines: init.iter().map(|ic| ic.state).collect(),
            voltages: v0,
            net,
            shunts,
            dyn_net,
            gen_bus,
            scale,
            init,
            gov,
            exc,
            pss: vec![PssState::steady(0.0); ng],
            agc: AgcState::default(),
            p_ref,
            p_gov,
            p_agc: vec![0.0; ng],
            v_pss: vec![0.0; ng],
            e_f,
            p_m: Vec::new(),
            ofo_cfg: ofo_cfg.clone(),
            ofo: OfoState::new(u),
            options: options.clone(),
            pf_warm: Some(pf),
            rng: ChaCha8Rng::seed_from_u64(options.seed),
            dt,
            step_index: 0,
        };
        sim.p_m = sim.mechanical_power();
        sim.voltages = sim.solve_network(&sim.machines)?;
        Ok(sim)
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.dt
    }

    pub fn network(&self) -> &NetworkModel {
        &self.net
    }

    pub fn voltages(&self) -> &[Complex64] {
        &self.voltages
    }

    pub fn machine_states(&self) -> &[MachineState] {
        &self.machines
    }

    pub fn initial_conditions(&self) -> &[InitialCondition] {
        &self.init
    }

    pub fn dynamic_network(&self) -> &DynamicNetwork {
        &self.dyn_net
    }

    pub fn controller(&self) -> &OfoState {
        &self.ofo
    }

    pub fn mechanical_power_now(&self) -> &[f64] {
        &self.p_m
    }

    pub fn measurement(&self) -> Measurement {
        extract_measurement(&self.net, &self.voltages, self.time())
    }

    pub fn gap(&self) -> f64 {
        complex_voltage_gap(&self.measurement())
    }

    /// Per-bus Norton currents, system base.
    pub fn source_currents(&self, states: &[MachineState]) -> Vec<Complex64> {
        let mut i = vec![Complex64::new(0.0, 0.0); self.net.n_bus()];
        for (g, &bus) in self.gen_bus.iter().enumerate() {
            i[bus] += norton_current(&self.grid.machines[g], &states[g]) * self.scale[g];
        }
        i
    }

    fn solve_network(&self, states: &[MachineState]) -> Result<Vec<Complex64>> {
        network_solve(&self.dyn_net, &self.source_currents(states))
    }

    fn derivatives(&self, states: &[MachineState]) -> Result<Vec<MachineState>> {
        let v = self.solve_network(states)?;
        let mut out = Vec::with_capacity(states.len());
        for (g, &bus) in self.gen_bus.iter().enumerate() {
            out.push(machine_derivatives(&self.grid.machines[g], &states[g], self.p_m[g], self.e_f[g], v[bus])?);
        }
        Ok(out)
    }

    /// Electrical power per machine at the current state, generator base.
    pub fn electrical_power(&self) -> Result<Vec<f64>> {
        self.gen_bus
            .iter()
            .enumerate()
            .map(|(g, &bus)| {
                let s = &self.machines[g];
                let (i_d, i_q) = dq_currents(&self.grid.machines[g], s, self.voltages[bus])?;
                Ok(electrical_power(s, i_d, i_q))
            })
            .collect()
    }

    fn mechanical_power(&self) -> Vec<f64> {
        let ng = self.gen_bus.len();
        (0..ng).map(|g| self.p_gov[g] + self.ofo.u[g] + self.p_agc[g]).collect()
    }

    /// One RK4 step of the machine ODEs with p_m and E_f held.
    pub(crate) fn step_machines(&mut self) -> Result<()> {
        let dt = self.dt;
        let x0 = self.machines.clone();
        let shift = |k: &[MachineState], h: f64| -> Vec<MachineState> {
            x0.iter().zip(k).map(|(x, d)| *x + *d * h).collect()
        };
        let k1 = self.derivatives(&x0)?;
        let k2 = self.derivatives(&shift(&k1, dt / 2.0))?;
        let k3 = self.derivatives(&shift(&k2, dt / 2.0))?;
        let k4 = self.derivatives(&shift(&k3, dt))?;
        let next: Vec<MachineState> = (0..x0.len())
            .map(|g| x0[g] + (k1[g] + k2[g] * 2.0 + k3[g] * 2.0 + k4[g]) * (dt / 6.0))
            .collect();
        if next.iter().any(|s| !s.is_finite() || s.max_abs() > BLOWUP) {
            return Err(Error::Instability { t: self.time() + dt });
        }
        self.voltages = self.solve_network(&next)?;
        self.machines = next;
        Ok(())
    }

    fn step_controls(&mut self) -> Result<()> {
        let dt = self.dt;
        let ng = self.gen_bus.len();
        let dw: Vec<f64> = self.machines.iter().map(|s| s.delta_omega).collect();
        for g in 0..ng {
            let (ps, v_pss) = pss_step(&self.grid.pss[g], &self.pss[g], dw[g], dt);
            self.pss[g] = ps;
            self.v_pss[g] = v_pss;
            let dv = self.ofo.u[ng + g] - self.voltages[self.gen_bus[g]].norm();
            let (es, e_f) = exciter_step(&self.grid.exciters[g], &self.exc[g], dv, v_pss, self.init[g].e_f0, dt);
            self.exc[g] = es;
            self.e_f[g] = e_f;
            let (gs, p_gov) = governor_step(&self.grid.governors[g], &self.gov[g], dw[g], self.p_ref[g], dt);
            self.gov[g] = gs;
            self.p_gov[g] = p_gov;
        }
        let h: Vec<f64> = self.grid.machines.iter().map(|m| m.h).collect();
        let s: Vec<f64> = self.grid.machines.iter().map(|m| m.s).collect();
        let avg = average_frequency(&dw, &h, &s)?;
        let (agc, p_agc) = agc_step(&self.grid.agc, &self.agc, avg, dt);
        self.agc = agc;
        // the AGC output is on the system base
        for g in 0..ng {
            self.p_agc[g] = p_agc[g] / self.scale[g];
        }
        self.p_m = self.mechanical_power();
        Ok(())
    }

    /// Advances machines and control blocks by one step.
    pub fn step(&mut self) -> Result<()> {
        self.step_machines()?;
        self.step_controls()?;
        self.step_index += 1;
        Ok(())
    }

    /// Takes a line in or out of service and refactors the network.
    /// Returns false when the line already had the requested status.
    pub fn set_line(&mut self, line_id: usize, in_service: bool) -> Result<bool> {
        let k = self
            .net
            .line_index(line_id)
            .ok_or_else(|| Error::Config(format!("unknown line id {line_id}")))?;
        if self.net.lines()[k].in_service == in_service {
            return Ok(false);
        }
        let mut next = self.net.clone();
        next.set_line_in_service(line_id, in_service)?;
        self.dyn_net = DynamicNetwork::build(&next, &self.shunts)?;
        self.net = next;
        self.voltages = self.solve_network(&self.machines)?;
        Ok(true)
    }

    /// Overrides the set-points, clamped into the controller's input box.
    pub fn set_inputs(&mut self, p: Option<&[f64]>, v: Option<&[f64]>) {
        let ng = self.gen_bus.len();
        let (lo, hi) = self.ofo_cfg.input_bounds(ng);
        if let Some(p) = p {
            for g in 0..ng {
                self.ofo.u[g] = p[g].clamp(lo[g], hi[g]);
            }
        }
        if let Some(v) = v {
            for g in 0..ng {
                self.ofo.u[ng + g] = v[g].clamp(lo[ng + g], hi[ng + g]);
            }
        }
        self.p_m = self.mechanical_power();
    }

    fn noisy(&mut self, mut m: Measurement) -> Measurement {
        let a = self.ofo_cfg.noise;
        if a > 0.0 {
            for x in m.v.iter_mut().chain(m.flows.iter_mut()) {
                *x += self.rng.random_range(-a..=a);
            }
            m.delta_theta += self.rng.random_range(-a..=a);
        }
        m
    }

    /// Measures, linearizes at the measured operating point and applies one
    /// controller update.
    pub fn controller_update(&mut self) -> Result<ControllerSample> {
        let m = self.measurement();
        let m = self.noisy(m);
        let p_e = self.electrical_power()?;
        let gen_p: Vec<f64> = (0..p_e.len()).map(|g| p_e[g] * self.scale[g]).collect();
        let gen_v: Vec<f64> = self.gen_bus.iter().map(|&b| m.v[b]).collect();
        let model = match self.options.topology {
            Topology::Nominal => self.net.clone(),
            Topology::Removed(line) => self.net.with_line_removed(line)?,
        };
        model.check_connected()?;
        let op = solve_power_flow(&model, &gen_p, &gen_v, self.pf_warm.as_ref())
            .or_else(|_| solve_power_flow(&model, &gen_p, &gen_v, None))?;
        let mut sens = compute_sensitivity(&model, &op, &self.scale)?;
        sens.topology = self.options.topology;
        self.pf_warm = Some(op);
        let (next, report) = ofo_update(&self.ofo_cfg, &self.limits, &self.ofo, &m, &sens)?;
        self.ofo = next;
        self.p_m = self.mechanical_power();
        Ok(ControllerSample {
            t: self.time(),
            iteration: self.ofo.iterations,
            gap: complex_voltage_gap(&m),
            objective: objective(&m),
            u: self.ofo.u.clone(),
            report,
        })
    }

    pub fn record(&self) -> Result<Record> {
        let ng = self.gen_bus.len();
        let measurement = self.measurement();
        Ok(Record {
            t: self.time(),
            gap: complex_voltage_gap(&measurement),
            measurement,
            voltages: self.voltages.clone(),
            machines: self.machines.clone(),
            p_ofo: self.ofo.u[..ng].to_vec(),
            v_ofo: self.ofo.u[ng..].to_vec(),
            p_m: self.p_m.clone(),
            p_e: self.electrical_power()?,
        })
    }

    /// Angle across the event's line, or across the monitored pair.
    fn guard_angle(&self, e: &Event) -> f64 {
        let (a, b) = match e.line().and_then(|id| self.net.line_index(id)) {
            Some(k) => {
                let l = &self.net.lines()[k];
                (self.net.bus_index(l.from_bus).expect("validated"), self.net.bus_index(l.to_bus).expect("validated"))
            }
            None => self.net.monitored_indices(),
        };
        crate::network::wrap_angle(self.voltages[a].arg() - self.voltages[b].arg())
    }

    fn apply_event(&mut self, e: &Event, log: &mut Vec<LogEntry>) -> Result<()> {
        let t = self.time();
        let message = match &e.kind {
            EventKind::LineTrip { line } => {
                if self.set_line(*line, false)? {
                    format!("line {line} tripped")
                } else {
                    format!("line {line} already out of service")
                }
            }
            EventKind::LineReclose { line } => {
                if self.set_line(*line, true)? {
                    format!("line {line} reclosed")
                } else {
                    format!("line {line} already in service")
                }
            }
            EventKind::ActivateOfo => {
                self.ofo.active = true;
                "controller activated".to_string()
            }
            EventKind::SetInput { p, v } => {
                self.set_inputs(p.as_deref(), v.as_deref());
                "set-points overridden".to_string()
            }
        };
        log.push(LogEntry { t, message });
        Ok(())
    }
}

/// Runs a scenario from the scheduled equilibrium.
pub fn run_scenario(grid: &Grid, scenario: &Scenario, options: &RunOptions) -> Result<Trajectory> {
    scenario.check_against(grid)?;
    let sim_cfg: &SimConfig = &scenario.sim;
    sim_cfg.validate()?;
    let dt = sim_cfg.dt;
    let record_stride = steps_per(sim_cfg.record_every, dt, "sim.record_every")?;
    let sample_stride = steps_per(scenario.ofo.sampling_period, dt, "ofo.sampling_period")?;
    let n_steps = sim_cfg.n_steps();

    let mut sim = Simulator::new(grid, &scenario.ofo, dt, options.clone())?;
    let mut traj = Trajectory::default();
    // (event, guard already reported as failing)
    let mut pending: Vec<(Event, bool)> = scenario.events.iter().map(|e| (e.clone(), false)).collect();
    let mut ofo_origin: Option<usize> = None;

    for k in 0..=n_steps {
        let t = sim.time();
        let mut fired = Vec::new();
        let mut i = 0;
        while i < pending.len() {
            let (e, reported) = &mut pending[i];
            if e.time > t + 0.5 * dt {
                i += 1;
                continue;
            }
            if let Some(g) = &e.guard {
                let angle = sim.guard_angle(e).abs().to_degrees();
                if angle >= g.max_angle_deg {
                    if !*reported {
                        traj.log.push(LogEntry {
                            t,
                            message: format!(
                                "guard held back {:?}: angle {angle:.2} deg >= {} deg",
                                e.kind, g.max_angle_deg
                            ),
                        });
                        *reported = true;
                    }
                    i += 1;
                    continue;
                }
                traj.log.push(LogEntry {
                    t,
                    message: format!("guard passed {:?}: angle {angle:.2} deg < {} deg", e.kind, g.max_angle_deg),
                });
            }
            fired.push(pending.remove(i).0);
        }
        for e in &fired {
            log::debug!("t = {t:.3} s: applying {:?}", e.kind);
            let was_active = sim.ofo.active;
            sim.apply_event(e, &mut traj.log)?;
            if !was_active && sim.ofo.active {
                ofo_origin = Some(k);
            }
        }
        if let Some(origin) = ofo_origin {
            if (k - origin) % sample_stride == 0 {
                let sample = sim.controller_update()?;
                if sample.report.softened {
                    traj.log.push(LogEntry {
                        t,
                        message: format!("output constraints softened (max slack {:.3e})", sample.report.max_slack),
                    });
                }
                if sample.report.status != QpStatus::Optimal {
                    traj.log.push(LogEntry { t, message: format!("projection QP ended with {:?}", sample.report.status) });
                }
                traj.samples.push(sample);
            }
        }
        if k % record_stride == 0 {
            traj.records.push(sim.record()?);
        }
        if k == n_steps {
            break;
        }
        sim.step()?;
    }
    Ok(traj)
}
