use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use ofo_core::data::{EventKind, Grid, Scenario};
use ofo_core::network::solve_power_flow;
use ofo_core::sensitivity::{compute_sensitivity, perturbed_sensitivity, Topology};
use ofo_core::simulator::{run_scenario, RunOptions};

use crate::manifest::{load_grid, RunManifest};
use crate::output::{
    read_event_markers, write_events, write_trajectory, Table, EVENTS_FILE, GAP_SERIES_FILE, SWEEP_FILE,
    TRAJECTORY_FILE,
};
use crate::svg::{Chart, Series};
use crate::sweep::{run_sweep, write_gap_series, write_sweep, SweepResult};

pub const SENSITIVITY_FILE: &str = "sensitivity.csv";

/// Base-case power flow, formatted as a per-bus table.
pub fn cmd_powerflow(grid: Option<&Path>) -> Result<String> {
    let grid = load_grid(grid)?;
    let net = &grid.network;
    let (p, v) = net.scheduled_setpoints();
    let sol = solve_power_flow(net, &p, &v, None)?;
    let mut out = String::new();
    let _ = writeln!(out, "{:>5} {:>4} {:>10} {:>12} {:>10} {:>10}", "bus", "kind", "v [pu]", "theta [deg]", "p [pu]", "q [pu]");
    for (k, bus) in net.buses().iter().enumerate() {
        let _ = writeln!(
            out,
            "{:>5} {:>4} {:>10.6} {:>12.6} {:>10.5} {:>10.5}",
            bus.id,
            format!("{:?}", bus.kind),
            sol.v[k],
            sol.theta[k].to_degrees(),
            sol.p_inj[k],
            sol.q_inj[k]
        );
    }
    let _ = writeln!(out, "converged in {} iterations, max mismatch {:.3e} pu", sol.iterations, sol.residual);
    Ok(out)
}

fn load_checked(m: &RunManifest) -> Result<(Grid, Scenario)> {
    m.validate()?;
    let grid = m.load_grid()?;
    let sc = m.load_scenario()?;
    sc.check_against(&grid)?;
    Ok((grid, sc))
}

/// Runs one scenario and writes the trajectory, event log and plots.
pub fn cmd_simulate(m: &RunManifest) -> Result<()> {
    let (grid, sc) = load_checked(m)?;
    let tr = run_scenario(&grid, &sc, &RunOptions { topology: m.topology, seed: m.seed })?;
    write_trajectory(&m.out.join(TRAJECTORY_FILE), &tr)?;
    write_events(&m.out.join(EVENTS_FILE), &tr.log)?;
    plot_trajectory(&m.out)?;
    log::info!("{} records, {} controller samples", tr.records.len(), tr.samples.len());
    Ok(())
}

/// Sweep over single-line-removed sensitivities.
pub fn cmd_robustness(m: &RunManifest) -> Result<SweepResult> {
    let (grid, sc) = load_checked(m)?;
    let res = run_sweep(&grid, &sc, m.seed)?;
    write_sweep(&m.out.join(SWEEP_FILE), &res)?;
    write_gap_series(&m.out.join(GAP_SERIES_FILE), &res)?;
    plot_sweep(&m.out)?;
    Ok(res)
}

/// Sensitivity matrix at the scheduled set-points. With a scenario, its
/// line trips are applied first.
pub fn cmd_sensitivity(m: &RunManifest) -> Result<()> {
    m.validate()?;
    let grid = m.load_grid()?;
    let mut net = grid.network.clone();
    if m.scenario.is_some() {
        let sc = m.load_scenario()?;
        sc.check_against(&grid)?;
        for e in &sc.events {
            if let EventKind::LineTrip { line } = e.kind {
                net.set_line_in_service(line, false)?;
            }
        }
    }
    let (p, v) = net.scheduled_setpoints();
    let scale = grid.power_scale();
    let s = match m.topology {
        Topology::Nominal => {
            let op = solve_power_flow(&net, &p, &v, None)?;
            compute_sensitivity(&net, &op, &scale)?
        }
        Topology::Removed(line) => perturbed_sensitivity(&net, line, &p, &v, None, &scale)?,
    };
    let path = m.out.join(SENSITIVITY_FILE);
    fs::write(&path, s.to_csv(&net)).with_context(|| format!("writing {}", path.display()))
}

/// Regenerates whichever plots have their CSV in `dir`.
pub fn cmd_plot(dir: &Path) -> Result<Vec<String>> {
    let mut made = Vec::new();
    if dir.join(TRAJECTORY_FILE).is_file() {
        made.extend(plot_trajectory(dir)?);
    }
    if dir.join(GAP_SERIES_FILE).is_file() {
        made.extend(plot_sweep(dir)?);
    }
    anyhow::ensure!(
        !made.is_empty(),
        crate::manifest::InputError(format!("no {TRAJECTORY_FILE} or {GAP_SERIES_FILE} in {}", dir.display()))
    );
    Ok(made)
}

fn save(dir: &Path, name: &str, chart: &Chart) -> Result<String> {
    let path = dir.join(name);
    fs::write(&path, chart.render()).with_context(|| format!("writing {}", path.display()))?;
    Ok(name.to_string())
}

/// The three trajectory panels: gap, voltage set-points, active powers.
pub fn plot_trajectory(dir: &Path) -> Result<Vec<String>> {
    let table = Table::read(&dir.join(TRAJECTORY_FILE))?;
    let t = table.column("t").context("trajectory has no t column")?;
    let events = dir.join(EVENTS_FILE);
    let markers = if events.is_file() { read_event_markers(&events)? } else { Vec::new() };
    let chart = |title: &str, y_label: &str, series: Vec<Series>| Chart {
        title: title.into(),
        x_label: "time [s]".into(),
        y_label: y_label.into(),
        series,
        markers: markers.clone(),
        legend_limit: Some(20),
    };
    let gap = table.column("vgap").context("trajectory has no vgap column")?;
    let mut made = vec![save(dir, "gap.svg", &chart("Complex voltage gap", "gap [pu]", vec![Series::new("vgap", t, gap)]))?];
    let v: Vec<Series> = table.family("vOFO").into_iter().map(|(h, c)| Series::new(h, t, c)).collect();
    made.push(save(dir, "v_setpoints.svg", &chart("Voltage set-points", "v [pu]", v))?);
    let mut p: Vec<Series> = table.family("pOFO").into_iter().map(|(h, c)| Series::new(h, t, c)).collect();
    p.extend(table.family("pm").into_iter().map(|(h, c)| Series::new(h, t, c).dashed()));
    made.push(save(dir, "active_power.svg", &chart("Active power set-points and mechanical power", "p [pu]", p))?);
    Ok(made)
}

pub fn plot_sweep(dir: &Path) -> Result<Vec<String>> {
    let table = Table::read(&dir.join(GAP_SERIES_FILE))?;
    let t = table.column("t").context("gap series has no t column")?;
    let mut series = Vec::new();
    if let Some(c) = table.column("nominal") {
        series.push(Series::new("nominal", t, c));
    }
    series.extend(table.family("line").into_iter().map(|(h, c)| Series::new(h, t, c).dashed()));
    let chart = Chart {
        title: "Voltage gap under single-line-removed sensitivities".into(),
        x_label: "time [s]".into(),
        y_label: "gap [pu]".into(),
        series,
        markers: Vec::new(),
        legend_limit: Some(18),
    };
    Ok(vec![save(dir, "robustness.svg", &chart)?])
}
