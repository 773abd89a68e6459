//! Closed-loop runs under single-line-removed sensitivities.

use std::path::Path;

use anyhow::{Context, Result};
use ofo_core::data::{EventKind, Grid, Scenario};
use ofo_core::sensitivity::Topology;
use ofo_core::simulator::{run_scenario, RunOptions, Trajectory};
use ofo_core::Error;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Nominal,
    Ok,
    Skipped,
    Failed,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Nominal => "nominal",
            RunStatus::Ok => "ok",
            RunStatus::Skipped => "skipped",
            RunStatus::Failed => "failed",
        }
    }
}

/// Event times the metrics are measured against.
#[derive(Debug, Clone, Copy)]
pub struct Timeline {
    pub trip: f64,
    pub activation: f64,
    /// Infinity when the scenario never recloses.
    pub reclose: f64,
}

impl Timeline {
    pub fn of(sc: &Scenario) -> Result<Self> {
        let first = |pred: fn(&EventKind) -> bool| sc.events.iter().find(|e| pred(&e.kind)).map(|e| e.time);
        let trip = first(|k| matches!(k, EventKind::LineTrip { .. })).context("scenario has no line trip")?;
        let activation =
            first(|k| matches!(k, EventKind::ActivateOfo)).context("scenario never activates the controller")?;
        let reclose = first(|k| matches!(k, EventKind::LineReclose { .. })).unwrap_or(f64::INFINITY);
        Ok(Self { trip, activation, reclose })
    }
}

/// Summary of one closed-loop run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapMetrics {
    /// Largest gap between the trip and controller activation.
    pub peak: f64,
    /// Largest gap from the trip onwards.
    pub max_gap: f64,
    pub final_gap: f64,
    /// Gap at the first controller sample.
    pub pre_activation: f64,
    /// First sample index with the gap at or below half its pre-activation value.
    pub steps_to_halve: Option<usize>,
    /// First sample index before the reclose with a 90% reduction.
    pub milestone: Option<usize>,
}

impl GapMetrics {
    pub fn of(tr: &Trajectory, tl: &Timeline) -> Option<Self> {
        let after_trip = tr.records.iter().filter(|r| r.t >= tl.trip - 1e-9);
        let peak = after_trip
            .clone()
            .filter(|r| r.t <= tl.activation + 1e-9)
            .map(|r| r.gap)
            .fold(f64::NEG_INFINITY, f64::max);
        let max_gap = after_trip.map(|r| r.gap).fold(f64::NEG_INFINITY, f64::max);
        let final_gap = tr.records.last()?.gap;
        let pre_activation = tr.samples.first()?.gap;
        let first_below = |frac: f64, before: f64| {
            tr.samples.iter().position(|s| s.t < before && s.gap <= frac * pre_activation)
        };
        Some(Self {
            peak,
            max_gap,
            final_gap,
            pre_activation,
            steps_to_halve: first_below(0.5, f64::INFINITY),
            milestone: first_below(0.1, tl.reclose),
        })
    }

    /// Never above three times the post-trip peak, and ending below it.
    pub fn bounded(&self) -> bool {
        self.max_gap.is_finite() && self.max_gap <= 3.0 * self.peak && self.final_gap < self.peak
    }
}

#[derive(Debug, Clone)]
pub struct SweepRun {
    /// `None` for the nominal run.
    pub line: Option<usize>,
    pub status: RunStatus,
    pub metrics: Option<GapMetrics>,
    pub reason: String,
    /// (t, gap) per record.
    pub gap_series: Vec<(f64, f64)>,
}

impl SweepRun {
    pub fn stable(&self) -> bool {
        self.metrics.is_some_and(|m| m.bounded())
    }
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub nominal: SweepRun,
    /// Sorted by removed-line id.
    pub perturbed: Vec<SweepRun>,
}

impl SweepResult {
    pub fn runs(&self) -> impl Iterator<Item = &SweepRun> {
        std::iter::once(&self.nominal).chain(&self.perturbed)
    }

    /// Perturbed runs that were simulated (not skipped for islanding).
    pub fn attempted(&self) -> impl Iterator<Item = &SweepRun> {
        self.perturbed.iter().filter(|r| r.status != RunStatus::Skipped)
    }

    /// Share of attempted runs whose milestone is within `factor` times the nominal one.
    pub fn milestone_share(&self, factor: usize) -> f64 {
        let Some(limit) = self.nominal.metrics.and_then(|m| m.milestone).map(|k| k * factor) else {
            return 0.0;
        };
        let runs: Vec<_> = self.attempted().collect();
        if runs.is_empty() {
            return 0.0;
        }
        let hits = runs.iter().filter(|r| r.metrics.and_then(|m| m.milestone).is_some_and(|k| k <= limit)).count();
        hits as f64 / runs.len() as f64
    }
}

/// Flow lines not tripped by the scenario, ascending.
pub fn candidate_lines(grid: &Grid, sc: &Scenario) -> Vec<usize> {
    let tripped: Vec<usize> = sc
        .events
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::LineTrip { line } => Some(line),
            _ => None,
        })
        .collect();
    let net = &grid.network;
    let mut ids: Vec<usize> =
        net.flow_lines().iter().map(|&k| net.lines()[k].id).filter(|id| !tripped.contains(id)).collect();
    ids.sort_unstable();
    ids
}

/// Islanding check on the post-trip topology.
fn islands(grid: &Grid, sc: &Scenario, line: usize) -> Option<String> {
    let mut net = grid.network.clone();
    for e in &sc.events {
        if let EventKind::LineTrip { line } = e.kind {
            let _ = net.set_line_in_service(line, false);
        }
    }
    match net.with_line_removed(line).and_then(|n| n.check_connected()) {
        Err(e @ Error::Islanding { .. }) => Some(e.to_string()),
        _ => None,
    }
}

fn run_one(grid: &Grid, sc: &Scenario, tl: &Timeline, line: Option<usize>, seed: u64) -> SweepRun {
    if let Some(l) = line {
        if let Some(reason) = islands(grid, sc, l) {
            return SweepRun { line, status: RunStatus::Skipped, metrics: None, reason, gap_series: Vec::new() };
        }
    }
    let topology = line.map_or(Topology::Nominal, Topology::Removed);
    let ok = if line.is_some() { RunStatus::Ok } else { RunStatus::Nominal };
    match run_scenario(grid, sc, &RunOptions { topology, seed }) {
        Ok(tr) => {
            let metrics = GapMetrics::of(&tr, tl);
            let reason = if metrics.is_none() { "no controller samples".to_string() } else { String::new() };
            let gap_series = tr.records.iter().map(|r| (r.t, r.gap)).collect();
            SweepRun { line, status: ok, metrics, reason, gap_series }
        }
        Err(e @ Error::Islanding { .. }) => {
            SweepRun { line, status: RunStatus::Skipped, metrics: None, reason: e.to_string(), gap_series: Vec::new() }
        }
        Err(e) => SweepRun { line, status: RunStatus::Failed, metrics: None, reason: e.to_string(), gap_series: Vec::new() },
    }
}

/// Runs the nominal loop and one loop per candidate line, in parallel.
pub fn run_sweep(grid: &Grid, sc: &Scenario, seed: u64) -> Result<SweepResult> {
    let tl = Timeline::of(sc)?;
    let jobs: Vec<Option<usize>> =
        std::iter::once(None).chain(candidate_lines(grid, sc).into_iter().map(Some)).collect();
    let mut runs: Vec<SweepRun> = jobs.par_iter().map(|&line| run_one(grid, sc, &tl, line, seed)).collect();
    let nominal = runs.remove(0);
    runs.sort_by_key(|r| r.line);
    Ok(SweepResult { nominal, perturbed: runs })
}

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub const SWEEP_HEADER: [&str; 9] =
    ["line", "status", "peak", "max_gap", "final_gap", "steps_to_halve", "milestone", "stable", "reason"];

pub fn write_sweep(path: &Path, res: &SweepResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(SWEEP_HEADER)?;
    for r in res.runs() {
        let m = r.metrics;
        w.write_record([
            r.line.map_or_else(|| "nominal".to_string(), |l| l.to_string()),
            r.status.as_str().to_string(),
            opt(m.map(|m| m.peak)),
            opt(m.map(|m| m.max_gap)),
            opt(m.map(|m| m.final_gap)),
            opt(m.and_then(|m| m.steps_to_halve)),
            opt(m.and_then(|m| m.milestone)),
            if r.status == RunStatus::Skipped { String::new() } else { r.stable().to_string() },
            r.reason.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One column per simulated run, aligned on the nominal run's record times.
pub fn write_gap_series(path: &Path, res: &SweepResult) -> Result<()> {
    let runs: Vec<&SweepRun> = res.runs().filter(|r| !r.gap_series.is_empty()).collect();
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let mut header = vec!["t".to_string()];
    header.extend(runs.iter().map(|r| r.line.map_or_else(|| "nominal".to_string(), |l| format!("line_{l}"))));
    w.write_record(&header)?;
    let n = runs.iter().map(|r| r.gap_series.len()).max().unwrap_or(0);
    for i in 0..n {
        let t = runs.iter().find_map(|r| r.gap_series.get(i)).map(|p| p.0).unwrap_or(f64::NAN);
        let mut row = vec![t.to_string()];
        row.extend(runs.iter().map(|r| r.gap_series.get(i).map(|p| p.1.to_string()).unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
