//! Governor, excitation system, power system stabilizer and automatic
//! generation control.
//!
//! Every block is a cascade of first-order stages advanced with the
//! trapezoidal (Tustin) rule, one state per pole. The external input is held
//! over the step; an internal stage sees its upstream signal move from the
//! value at the start of the step (old state, held input) to the value at
//! the end. Limited stages clamp their state (anti-windup).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tustin update of x' = (gain·u − x)/t over one step with input moving
/// linearly from `u_prev` to `u`.
fn lag_update(x: f64, u_prev: f64, u: f64, gain: f64, t: f64, dt: f64) -> f64 {
    let a = dt / (2.0 * t);
    ((1.0 - a) * x + a * gain * (u_prev + u)) / (1.0 + a)
}

/// Output of the lead-lag (1 + s·t_lead)/(1 + s·t_lag) realized as
/// x' = (u − x)/t_lag, y = (t_lead/t_lag)·u + (1 − t_lead/t_lag)·x.
fn lead_lag_output(x: f64, u: f64, t_lead: f64, t_lag: f64) -> f64 {
    let k = t_lead / t_lag;
    k * u + (1.0 - k) * x
}

fn check_dt(dt: f64) {
    debug_assert!(dt > 0.0 && dt.is_finite(), "step must be positive, got {dt}");
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GovernorParams {
    #[serde(rename = "T_1")]
    pub t_1: f64,
    #[serde(rename = "T_2")]
    pub t_2: f64,
    #[serde(rename = "T_3")]
    pub t_3: f64,
    #[serde(rename = "R_g")]
    pub r_g: f64,
    #[serde(rename = "D_t", default)]
    pub d_t: f64,
    #[serde(rename = "V_min")]
    pub v_min: f64,
    #[serde(rename = "V_max")]
    pub v_max: f64,
}

impl GovernorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_1 > 0.0 && self.t_3 > 0.0 && self.t_2 >= 0.0) {
            return Err(Error::Config("governor needs T_1, T_3 > 0 and T_2 >= 0".into()));
        }
        if !(self.r_g > 0.0) {
            return Err(Error::Config("governor droop R_g must be positive".into()));
        }
        if !(self.v_min < self.v_max) || !self.d_t.is_finite() {
            return Err(Error::Config("governor needs V_min < V_max".into()));
        }
        Ok(())
    }
}

/// Governor: valve lag with limits followed by the turbine lead-lag.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GovernorState {
    pub valve: f64,
    pub turbine: f64,
    pub limited: bool,
}

impl GovernorState {
    /// Steady state for a constant reference and speed deviation.
    pub fn steady(p: &GovernorParams, p_m0: f64, delta_omega: f64) -> Self {
        let u = p_m0 - delta_omega / p.r_g;
        let valve = u.clamp(p.v_min, p.v_max);
        Self { valve, turbine: valve, limited: valve != u }
    }

    pub fn output(&self, p: &GovernorParams, delta_omega: f64) -> f64 {
        lead_lag_output(self.turbine, self.valve, p.t_2, p.t_3) - p.d_t * delta_omega
    }
}

pub fn governor_step(
    p: &GovernorParams,
    s: &GovernorState,
    delta_omega: f64,
    p_m0: f64,
    dt: f64,
) -> (GovernorState, f64) {
    check_dt(dt);
    let u = p_m0 - delta_omega / p.r_g;
    let raw = lag_update(s.valve, u, u, 1.0, p.t_1, dt);
    let valve = raw.clamp(p.v_min, p.v_max);
    let turbine = lag_update(s.turbine, s.valve, valve, 1.0, p.t_3, dt);
    let next = GovernorState { valve, turbine, limited: valve != raw };
    let out = next.output(p, delta_omega);
    (next, out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExciterParams {
    #[serde(rename = "K_ex")]
    pub k_ex: f64,
    #[serde(rename = "T_a")]
    pub t_a: f64,
    #[serde(rename = "T_b")]
    pub t_b: f64,
    #[serde(rename = "T_e")]
    pub t_e: f64,
    #[serde(rename = "E_min")]
    pub e_min: f64,
    #[serde(rename = "E_max")]
    pub e_max: f64,
}

impl ExciterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_b > 0.0 && self.t_e > 0.0 && self.t_a >= 0.0 && self.k_ex > 0.0) {
            return Err(Error::Config("exciter needs T_b, T_e, K_ex > 0 and T_a >= 0".into()));
        }
        if !(self.e_min < self.e_max) {
            return Err(Error::Config("exciter needs E_min < E_max".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExciterState {
    pub filter: f64,
    pub field: f64,
    pub limited: bool,
}

impl ExciterState {
    /// Steady state holding E_f0 with zero voltage error and PSS signal.
    pub fn steady(p: &ExciterParams, e_f0: f64) -> Self {
        let u = e_f0 / p.k_ex;
        let field = (p.k_ex * u).clamp(p.e_min, p.e_max);
        Self { filter: u, field, limited: field != p.k_ex * u }
    }
}

/// `delta_v` is the set-point error v_OFO − v.
pub fn exciter_step(
    p: &ExciterParams,
    s: &ExciterState,
    delta_v: f64,
    v_pss: f64,
    e_f0: f64,
    dt: f64,
) -> (ExciterState, f64) {
    check_dt(dt);
    let u = e_f0 / p.k_ex + delta_v + v_pss;
    let filter_out_start = lead_lag_output(s.filter, u, p.t_a, p.t_b);
    let filter = lag_update(s.filter, u, u, 1.0, p.t_b, dt);
    let filter_out = lead_lag_output(filter, u, p.t_a, p.t_b);
    let raw = lag_update(s.field, filter_out_start, filter_out, p.k_ex, p.t_e, dt);
    let field = raw.clamp(p.e_min, p.e_max);
    let next = ExciterState { filter, field, limited: field != raw };
    (next, field)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PssParams {
    #[serde(rename = "K_PSS")]
    pub k_pss: f64,
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "T_1")]
    pub t_1: f64,
    #[serde(rename = "T_2")]
    pub t_2: f64,
    #[serde(rename = "T_3")]
    pub t_3: f64,
    #[serde(rename = "T_4")]
    pub t_4: f64,
    #[serde(rename = "H_lim")]
    pub h_lim: f64,
}

impl PssParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.t > 0.0 && self.t_3 > 0.0 && self.t_4 > 0.0 && self.h_lim > 0.0) {
            return Err(Error::Config("PSS needs T, T_3, T_4, H_lim > 0".into()));
        }
        if !(self.t_1 >= 0.0 && self.t_2 >= 0.0 && self.k_pss.is_finite()) {
            return Err(Error::Config("PSS needs T_1, T_2 >= 0".into()));
        }
        Ok(())
    }
}

/// Washout followed by two lead-lag stages.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PssState {
    pub washout: f64,
    pub lead1: f64,
    pub lead2: f64,
    pub limited: bool,
}

impl PssState {
    pub fn steady(delta_omega: f64) -> Self {
        Self { washout: delta_omega, ..Default::default() }
    }
}

pub fn pss_step(p: &PssParams, s: &PssState, delta_omega: f64, dt: f64) -> (PssState, f64) {
    check_dt(dt);
    let w_start = p.k_pss * (delta_omega - s.washout) / p.t;
    let l1_start = lead_lag_output(s.lead1, w_start, p.t_1, p.t_3);

    let washout = lag_update(s.washout, delta_omega, delta_omega, 1.0, p.t, dt);
    let w_out = p.k_pss * (delta_omega - washout) / p.t;
    let lead1 = lag_update(s.lead1, w_start, w_out, 1.0, p.t_3, dt);
    let l1_out = lead_lag_output(lead1, w_out, p.t_1, p.t_3);
    let lead2 = lag_update(s.lead2, l1_start, l1_out, 1.0, p.t_4, dt);
    let l2_out = lead_lag_output(lead2, l1_out, p.t_2, p.t_4);
    let out = l2_out.clamp(-p.h_lim, p.h_lim);
    let next = PssState { washout, lead1, lead2, limited: out != l2_out };
    (next, out)
}

/// Inertia-weighted mean speed deviation Σ Δω_i H_i S_i / Σ H_i S_i.
pub fn average_frequency(delta_omegas: &[f64], h: &[f64], s: &[f64]) -> Result<f64> {
    if delta_omegas.is_empty() {
        return Err(Error::Config("average frequency of an empty machine set".into()));
    }
    if h.len() != delta_omegas.len() || s.len() != delta_omegas.len() {
        return Err(Error::Config("average frequency inputs differ in length".into()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for ((&dw, &hi), &si) in delta_omegas.iter().zip(h).zip(s) {
        num += dw * hi * si;
        den += hi * si;
    }
    if !(den > 0.0) {
        return Err(Error::Config("total inertia must be positive".into()));
    }
    Ok(num / den)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgcParams {
    pub lambda: f64,
    #[serde(rename = "K_p")]
    pub k_p: f64,
    #[serde(rename = "K_i")]
    pub k_i: f64,
    pub beta: Vec<f64>,
}

impl AgcParams {
    pub fn validate(&self, n_gen: usize) -> Result<()> {
        if self.beta.len() != n_gen {
            return Err(Error::Config(format!(
                "AGC participation vector has {} entries for {n_gen} generators",
                self.beta.len()
            )));
        }
        if self.beta.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Error::Config("AGC participation factors must be non-negative".into()));
        }
        let sum: f64 = self.beta.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("AGC participation factors sum to {sum}, not 1")));
        }
        if ![self.lambda, self.k_p, self.k_i].iter().all(|v| v.is_finite()) {
            return Err(Error::Config("AGC gains must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AgcState {
    pub integral: f64,
}

/// PI on e = −λ·Δω̄ distributed by β. The returned vector sums to the PI
/// output.
pub fn agc_step(p: &AgcParams, s: &AgcState, avg_delta_omega: f64, dt: f64) -> (AgcState, Vec<f64>) {
    check_dt(dt);
    let e = -p.lambda * avg_delta_omega;
    let integral = s.integral + dt * p.k_i * e;
    let total = integral + p.k_p * e;
    let next = AgcState { integral };
    (next, p.beta.iter().map(|b| b * total).collect())
}
