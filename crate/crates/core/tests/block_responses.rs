//! Discrete control blocks against the analytic responses of their
//! continuous transfer functions, sampled at dt = 1 ms.

use std::f64::consts::PI;

use num_complex::Complex64;
use ofo_core::controls::*;

const DT: f64 = 1e-3;
const TOL: f64 = 1e-4;

/// Step response of (1 + s·tz)/((1 + s·t1)(1 + s·t2)).
fn lag_lead_lag_step(t: f64, tz: f64, t1: f64, t2: f64) -> f64 {
    1.0 - (t1 - tz) / (t1 - t2) * (-t / t1).exp() - (t2 - tz) / (t2 - t1) * (-t / t2).exp()
}

/// Impulse response of (1 + s·z1)(1 + s·z2)/((1 + s·p1)(1 + s·p2)(1 + s·p3))
/// for distinct poles, by residues.
fn impulse_two_zeros_three_poles(t: f64, z: [f64; 2], p: [f64; 3]) -> f64 {
    let poles = p.map(|tp| -1.0 / tp);
    let lead = p[0] * p[1] * p[2];
    (0..3)
        .map(|i| {
            let s = poles[i];
            let num = (1.0 + s * z[0]) * (1.0 + s * z[1]);
            let den: f64 = (0..3).filter(|&j| j != i).map(|j| s - poles[j]).product();
            num / (lead * den) * (s * t).exp()
        })
        .sum()
}

fn pss_transfer(p: &PssParams, w: f64) -> Complex64 {
    let s = Complex64::new(0.0, w);
    let one = Complex64::new(1.0, 0.0);
    s * p.k_pss / (one + s * p.t) * (one + s * p.t_1) / (one + s * p.t_3) * (one + s * p.t_2) / (one + s * p.t_4)
}

fn governor() -> GovernorParams {
    GovernorParams { t_1: 0.5, t_2: 1.0, t_3: 5.0, r_g: 0.05, d_t: 0.0, v_min: -10.0, v_max: 10.0 }
}

fn exciter() -> ExciterParams {
    ExciterParams { k_ex: 100.0, t_a: 1.0, t_b: 10.0, t_e: 0.1, e_min: -10.0, e_max: 10.0 }
}

fn stabilizer() -> PssParams {
    PssParams { k_pss: 20.0, t: 10.0, t_1: 0.5, t_2: 0.3, t_3: 0.05, t_4: 0.08, h_lim: 100.0 }
}

#[test]
fn governor_step_matches_analytic() {
    let p = governor();
    let dw = 0.01;
    let mut s = GovernorState::steady(&p, 0.0, 0.0);
    let mut worst: f64 = 0.0;
    for k in 1..=20_000 {
        let (next, y) = governor_step(&p, &s, dw, 0.0, DT);
        s = next;
        let exact = -dw / p.r_g * lag_lead_lag_step(k as f64 * DT, p.t_2, p.t_1, p.t_3);
        worst = worst.max((y - exact).abs());
    }
    assert!(worst <= TOL, "max error {worst:e}");
}

#[test]
fn governor_droop_with_turbine_damping() {
    let p = GovernorParams { d_t: 0.3, ..governor() };
    let (p_m0, dw) = (0.6, -0.004);
    let mut s = GovernorState::steady(&p, p_m0, 0.0);
    let mut y = 0.0;
    for _ in 0..200_000 {
        (s, y) = governor_step(&p, &s, dw, p_m0, DT);
    }
    let expected = p_m0 - dw / p.r_g - p.d_t * dw;
    assert!((y - expected).abs() < 1e-9, "{y} vs {expected}");
}

#[test]
fn exciter_step_matches_analytic() {
    let p = exciter();
    let (e_f0, dv) = (1.5, 0.005);
    let mut s = ExciterState::steady(&p, e_f0);
    let mut worst: f64 = 0.0;
    for k in 1..=30_000 {
        let (next, y) = exciter_step(&p, &s, dv, 0.0, e_f0, DT);
        s = next;
        let exact = e_f0 + p.k_ex * dv * lag_lead_lag_step(k as f64 * DT, p.t_a, p.t_b, p.t_e);
        worst = worst.max((y - exact).abs());
    }
    assert!(worst <= TOL, "max error {worst:e}");
}

#[test]
fn pss_step_matches_analytic() {
    let p = stabilizer();
    let dw = 1e-3;
    let mut s = PssState::steady(0.0);
    let mut worst: f64 = 0.0;
    for k in 1..=20_000 {
        let (next, y) = pss_step(&p, &s, dw, DT);
        s = next;
        let g = impulse_two_zeros_three_poles(k as f64 * DT, [p.t_1, p.t_2], [p.t, p.t_3, p.t_4]);
        worst = worst.max((y - p.k_pss * dw * g).abs());
    }
    assert!(worst <= TOL, "max error {worst:e}");
}

/// The held input reaches the lead stages' feedthrough half a step late,
/// an O(dt) phase error amplified by the lead ratio; a finer step keeps the
/// comparison about the transfer function rather than the hold.
#[test]
fn pss_frequency_response_within_one_percent() {
    const DT: f64 = 1e-4;
    let bundled = ofo_core::data::ieee39().unwrap().pss[0].clone();
    for (p, hz) in [0.2, 1.0, 2.0].into_iter().flat_map(|hz| [(stabilizer(), hz), (bundled.clone(), hz)]) {
        let p = PssParams { h_lim: 100.0, ..p };
        let w = 2.0 * PI * hz;
        let amp = 1e-3;
        let mut s = PssState::steady(0.0);
        let settle = 120.0;
        let window = (5.0 / hz / DT).round() as usize;
        let total = (settle / DT) as usize + window;
        let (mut ss, mut sc, mut n) = (0.0, 0.0, 0usize);
        for k in 0..total {
            let t = k as f64 * DT;
            // Input held over the step; sampled at the step midpoint so the
            // zero-order hold's half-step delay is not counted as phase.
            let u = amp * (w * (t + 0.5 * DT)).sin();
            let (next, y) = pss_step(&p, &s, u, DT);
            s = next;
            if k + window >= total {
                let tt = t + DT;
                ss += y * (w * tt).sin();
                sc += y * (w * tt).cos();
                n += 1;
            }
        }
        let measured = Complex64::new(2.0 * ss / n as f64, 2.0 * sc / n as f64) / amp;
        let exact = pss_transfer(&p, w);
        let gain_err = (measured.norm() - exact.norm()).abs() / exact.norm();
        let phase_err = (measured.arg() - exact.arg()).abs();
        assert!(gain_err < 0.01, "{p:?} {hz} Hz: gain {} vs {}", measured.norm(), exact.norm());
        assert!(phase_err < 0.01, "{p:?} {hz} Hz: phase {} vs {}", measured.arg(), exact.arg());
    }
}

#[test]
fn agc_pi_matches_analytic() {
    let p = AgcParams { lambda: 300.0, k_p: 0.4, k_i: 0.05, beta: vec![0.25, 0.75] };
    let dw = -0.002;
    let e = -p.lambda * dw;
    let mut s = AgcState::default();
    for k in 1..=10_000 {
        let (next, out) = agc_step(&p, &s, dw, DT);
        s = next;
        let total: f64 = out.iter().sum();
        let exact = e * (p.k_p + p.k_i * k as f64 * DT);
        assert!((total - exact).abs() <= 1e-9, "step {k}: {total} vs {exact}");
        for (o, b) in out.iter().zip(&p.beta) {
            assert!((o - b * total).abs() <= 1e-12);
        }
    }
}
