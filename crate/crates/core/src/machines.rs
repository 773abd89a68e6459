//! Sixth-order synchronous machine model and its Norton interface to the
//! network.
//!
//! Machine quantities are per-unit on the machine rating `S`. The dq frame
//! is obtained from the system frame by rotating through π/2 − δ, so the
//! q axis points along e^{jδ}.

use std::f64::consts::FRAC_PI_2;
use std::ops::{Add, Mul};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineParams {
    #[serde(rename = "H")]
    pub h: f64,
    #[serde(rename = "D", default)]
    pub d: f64,
    #[serde(rename = "R", default)]
    pub r: f64,
    #[serde(rename = "X_d")]
    pub x_d: f64,
    #[serde(rename = "X_d_t")]
    pub x_d_t: f64,
    #[serde(rename = "X_d_st")]
    pub x_d_st: f64,
    #[serde(rename = "X_q")]
    pub x_q: f64,
    #[serde(rename = "X_q_t")]
    pub x_q_t: f64,
    #[serde(rename = "X_q_st")]
    pub x_q_st: f64,
    #[serde(rename = "T_d0_t")]
    pub t_d0_t: f64,
    #[serde(rename = "T_q0_t")]
    pub t_q0_t: f64,
    #[serde(rename = "T_d0_st")]
    pub t_d0_st: f64,
    #[serde(rename = "T_q0_st")]
    pub t_q0_st: f64,
    /// Rating, MVA.
    #[serde(rename = "S")]
    pub s: f64,
    /// Nominal frequency, Hz. Converts the per-unit speed deviation into
    /// rotor angle rate.
    #[serde(default = "default_fn")]
    pub f_n: f64,
}

fn default_fn() -> f64 {
    60.0
}

impl MachineParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("H", self.h),
            ("X_d", self.x_d),
            ("X_d_t", self.x_d_t),
            ("X_d_st", self.x_d_st),
            ("X_q", self.x_q),
            ("X_q_t", self.x_q_t),
            ("X_q_st", self.x_q_st),
            ("T_d0_t", self.t_d0_t),
            ("T_q0_t", self.t_q0_t),
            ("T_d0_st", self.t_d0_st),
            ("T_q0_st", self.t_q0_st),
            ("S", self.s),
            ("f_n", self.f_n),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::MachineParam(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("D", self.d), ("R", self.r)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::MachineParam(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.x_d >= self.x_d_t && self.x_d_t >= self.x_d_st) {
            return Err(Error::MachineParam("need X_d >= X_d_t >= X_d_st".into()));
        }
        if !(self.x_q >= self.x_q_t && self.x_q_t >= self.x_q_st) {
            return Err(Error::MachineParam("need X_q >= X_q_t >= X_q_st".into()));
        }
        Ok(())
    }

    pub fn omega_base(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.f_n
    }

    /// Internal Norton admittance 1/(R + jX_d''), machine base.
    pub fn internal_admittance(&self) -> Complex64 {
        Complex64::new(self.r, self.x_d_st).inv()
    }
}

/// The six dynamic states of one machine.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MachineState {
    pub delta_omega: f64,
    pub delta: f64,
    pub e_q_t: f64,
    pub e_d_t: f64,
    pub e_q_st: f64,
    pub e_d_st: f64,
}

impl MachineState {
    pub fn to_array(self) -> [f64; 6] {
        [self.delta_omega, self.delta, self.e_q_t, self.e_d_t, self.e_q_st, self.e_d_st]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            delta_omega: a[0],
            delta: a[1],
            e_q_t: a[2],
            e_d_t: a[3],
            e_q_st: a[4],
            e_d_st: a[5],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.to_array().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Subtransient EMF as a system-frame phasor.
    pub fn subtransient_emf(&self) -> Complex64 {
        from_machine_frame(Complex64::new(self.e_d_st, self.e_q_st), self.delta)
    }
}

impl Add for MachineState {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let (a, b) = (self.to_array(), o.to_array());
        Self::from_array(std::array::from_fn(|k| a[k] + b[k]))
    }
}

impl Mul<f64> for MachineState {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        Self::from_array(self.to_array().map(|v| v * s))
    }
}

/// System-frame phasor to (d + jq) components.
pub fn to_machine_frame(x: Complex64, delta: f64) -> Complex64 {
    x * Complex64::from_polar(1.0, FRAC_PI_2 - delta)
}

pub fn from_machine_frame(x: Complex64, delta: f64) -> Complex64 {
    x * Complex64::from_polar(1.0, delta - FRAC_PI_2)
}

/// Stator currents (I_d, I_q) from the stator algebraic equations
/// E'' − v = (R + jX_d'')(I_d + jI_q), i.e.
/// `[R, −X_d''; X_d'', R]·[I_d; I_q] = [E_d'' − v_d; E_q'' − v_q]`.
pub fn dq_currents(p: &MachineParams, state: &MachineState, v_bus: Complex64) -> Result<(f64, f64)> {
    let det = p.r * p.r + p.x_d_st * p.x_d_st;
    if !(det > 0.0) {
        return Err(Error::MachineParam("stator equations are singular (R = X_d'' = 0)".into()));
    }
    let v = to_machine_frame(v_bus, state.delta);
    let a = state.e_d_st - v.re;
    let b = state.e_q_st - v.im;
    let i_d = (p.r * a + p.x_d_st * b) / det;
    let i_q = (p.r * b - p.x_d_st * a) / det;
    Ok((i_d, i_q))
}

pub fn electrical_power(state: &MachineState, i_d: f64, i_q: f64) -> f64 {
    state.e_d_st * i_d + state.e_q_st * i_q
}

/// i_inj = −(E_d''/X_d'' + j E_q''/X_q'') e^{jδ}, machine base.
pub fn injected_current(p: &MachineParams, state: &MachineState) -> Complex64 {
    -Complex64::new(state.e_d_st / p.x_d_st, state.e_q_st / p.x_q_st)
        * Complex64::from_polar(1.0, state.delta)
}

/// Norton source current E''/(R + jX_d''), machine base. Equals
/// [`injected_current`] for R = 0 and X_d'' = X_q''.
pub fn norton_current(p: &MachineParams, state: &MachineState) -> Complex64 {
    state.subtransient_emf() * p.internal_admittance()
}

/// Right-hand sides of the six machine ODEs.
pub fn machine_derivatives(
    p: &MachineParams,
    state: &MachineState,
    p_m: f64,
    e_f: f64,
    v_bus: Complex64,
) -> Result<MachineState> {
    let omega = 1.0 + state.delta_omega;
    if !(omega > 0.0) {
        return Err(Error::SpeedCollapse { omega });
    }
    let (i_d, i_q) = dq_currents(p, state, v_bus)?;
    let p_e = electrical_power(state, i_d, i_q);
    Ok(MachineState {
        delta_omega: (p_m / omega - p_e - p.d * omega) / (2.0 * p.h),
        delta: p.omega_base() * state.delta_omega,
        e_q_t: (e_f - state.e_q_t - i_d * (p.x_d - p.x_d_t)) / p.t_d0_t,
        e_d_t: (-state.e_d_t + i_q * (p.x_q - p.x_q_t)) / p.t_q0_t,
        e_q_st: (state.e_q_t - state.e_q_st - i_d * (p.x_d_t - p.x_d_st)) / p.t_d0_st,
        e_d_st: (state.e_d_t - state.e_d_st + i_q * (p.x_q_t - p.x_q_st)) / p.t_q0_st,
    })
}

/// Equilibrium of one machine together with the steady-state inputs that
/// hold it there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialCondition {
    pub state: MachineState,
    pub p_m0: f64,
    pub e_f0: f64,
}

/// Back-solves the machine equilibrium from terminal voltage and power
/// (both machine base).
pub fn init_from_power_flow(p: &MachineParams, v_term: Complex64, s_term: Complex64) -> Result<InitialCondition> {
    p.validate()?;
    if (p.x_d_st - p.x_q_st).abs() > 1e-12 {
        return Err(Error::Init(
            "the network interface requires X_d_st = X_q_st".into(),
        ));
    }
    if !(v_term.norm() > 1e-6) || !s_term.re.is_finite() || !s_term.im.is_finite() {
        return Err(Error::Init(format!("unusable terminal conditions V = {v_term}, S = {s_term}")));
    }
    let i = (s_term / v_term).conj();
    let e_q_axis = v_term + Complex64::new(p.r, p.x_q) * i;
    if !(e_q_axis.norm() > 1e-9) {
        return Err(Error::Init("q-axis EMF vanishes; rotor angle undefined".into()));
    }
    let delta = e_q_axis.arg();
    let im = to_machine_frame(i, delta);
    let vm = to_machine_frame(v_term, delta);
    let (i_d, i_q) = (im.re, im.im);

    let e_d_t = (p.x_q - p.x_q_t) * i_q;
    let e_d_st = e_d_t + (p.x_q_t - p.x_q_st) * i_q;
    let e_q_st = vm.im + p.r * i_q + p.x_d_st * i_d;
    let e_q_t = e_q_st + (p.x_d_t - p.x_d_st) * i_d;
    let e_f0 = e_q_t + (p.x_d - p.x_d_t) * i_d;
    let state = MachineState { delta_omega: 0.0, delta, e_q_t, e_d_t, e_q_st, e_d_st };
    let p_e = electrical_power(&state, i_d, i_q);
    let p_m0 = p_e + p.d;
    if !(p_m0.is_finite() && e_f0.is_finite()) {
        return Err(Error::Init("non-finite equilibrium".into()));
    }
    Ok(InitialCondition { state, p_m0, e_f0 })
}
