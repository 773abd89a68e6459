use nalgebra::DMatrix;
use ofo_core::data::ieee39;
use ofo_core::network::{extract_measurement, solve_power_flow, NetworkModel, PowerFlowSolution};
use ofo_core::sensitivity::compute_sensitivity;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn outputs(net: &NetworkModel, p: &[f64], v: &[f64], warm: &PowerFlowSolution) -> Vec<f64> {
    let sol = solve_power_flow(net, p, v, Some(warm)).unwrap();
    extract_measurement(net, &sol.voltages(), 0.0).to_vector()
}

fn central_differences(net: &NetworkModel, p: &[f64], v: &[f64], scale: &[f64], h: f64) -> DMatrix<f64> {
    let base = solve_power_flow(net, p, v, None).unwrap();
    let ng = net.n_gen();
    let ny = outputs(net, p, v, &base).len();
    let mut fd = DMatrix::zeros(ny, 2 * ng);
    for c in 0..2 * ng {
        let (mut pp, mut vp, mut pm, mut vm) = (p.to_vec(), v.to_vec(), p.to_vec(), v.to_vec());
        if c < ng {
            pp[c] += h * scale[c];
            pm[c] -= h * scale[c];
        } else {
            vp[c - ng] += h;
            vm[c - ng] -= h;
        }
        let (yp, ym) = (outputs(net, &pp, &vp, &base), outputs(net, &pm, &vm, &base));
        for r in 0..ny {
            fd[(r, c)] = (yp[r] - ym[r]) / (2.0 * h);
        }
    }
    fd
}

fn max_relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let floor = 1e-3 * b.amax().max(1e-12);
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs() / y.abs().max(floor)).fold(0.0, f64::max)
}

/// Scheduled set-points with generator outputs scaled by up to ±20% and
/// voltage set-points drawn from [0.97, 1.06].
fn random_operating_point(net: &NetworkModel, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let (mut p, mut v) = net.scheduled_setpoints();
    for x in p.iter_mut() {
        *x *= rng.random_range(0.8..1.2);
    }
    for x in v.iter_mut() {
        *x = rng.random_range(0.97..1.06);
    }
    (p, v)
}

fn check(net: &NetworkModel, p: &[f64], v: &[f64], scale: &[f64]) -> f64 {
    let op = solve_power_flow(net, p, v, None).unwrap();
    let s = compute_sensitivity(net, &op, scale).unwrap();
    let fd = central_differences(net, p, v, scale, 1e-5);
    max_relative_error(&s.matrix, &fd)
}

#[test]
fn base_case_matches_central_differences() {
    let grid = ieee39().unwrap();
    let (p, v) = grid.network.scheduled_setpoints();
    let err = check(&grid.network, &p, &v, &grid.power_scale());
    assert!(err <= 1e-4, "max relative error {err:e}");
}

#[test]
fn random_operating_points_match_central_differences() {
    let grid = ieee39().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(39);
    for _ in 0..3 {
        let (p, v) = random_operating_point(&grid.network, &mut rng);
        let err = check(&grid.network, &p, &v, &grid.power_scale());
        assert!(err <= 1e-4, "max relative error {err:e} at p = {p:?}, v = {v:?}");
    }
}

#[test]
fn post_trip_topology_matches_central_differences() {
    let grid = ieee39().unwrap();
    let net = grid.network.with_line_removed(38).unwrap();
    let (p, v) = net.scheduled_setpoints();
    let err = check(&net, &p, &v, &grid.power_scale());
    assert!(err <= 1e-4, "max relative error {err:e}");
}

#[test]
fn single_line_removal_sweep() {
    use ofo_core::sensitivity::{perturbed_sensitivity, Topology};
    use ofo_core::Error;

    let grid = ieee39().unwrap();
    let scale = grid.power_scale();
    let net = grid.network.with_line_removed(38).unwrap();
    let (p, v) = net.scheduled_setpoints();
    let op = solve_power_flow(&net, &p, &v, None).unwrap();
    let nominal = compute_sensitivity(&net, &op, &scale).unwrap();
    let candidates: Vec<usize> =
        net.flow_lines().iter().map(|&k| net.lines()[k].id).filter(|&id| id != 38).collect();
    assert_eq!(candidates.len(), 33);
    let mut gaps = Vec::new();
    for &line in &candidates {
        match perturbed_sensitivity(&net, line, &p, &v, Some(&op), &scale) {
            Ok(s) => {
                assert_eq!(s.topology, Topology::Removed(line));
                let gap = (&s.matrix - &nominal.matrix).norm() / nominal.matrix.norm();
                gaps.push((line, gap));
            }
            Err(Error::Islanding { .. }) => {}
            Err(e) => panic!("line {line}: {e}"),
        }
    }
    assert_eq!(gaps.len(), 28, "{gaps:?}");
    // Buses 7 and 8 are load buses, far from every generator terminal.
    let far = gaps.iter().find(|(l, _)| *l == 15).unwrap().1;
    assert!(far < 0.5, "relative Frobenius gap {far}");
}
