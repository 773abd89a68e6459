//! CSV and log files written by the commands.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use ofo_core::simulator::{LogEntry, Trajectory};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const EVENTS_FILE: &str = "events.log";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const GAP_SERIES_FILE: &str = "gap_series.csv";

pub fn trajectory_header(n_bus: usize, n_flow: usize, n_gen: usize) -> Vec<String> {
    let mut h = vec!["t".to_string(), "vgap".to_string()];
    h.extend((1..=n_bus).map(|i| format!("v_{i}")));
    h.push("dtheta".into());
    h.extend((1..=n_flow).map(|i| format!("flow_{i}")));
    for prefix in ["pOFO", "vOFO", "pm"] {
        h.extend((1..=n_gen).map(|i| format!("{prefix}_{i}")));
    }
    h
}

pub fn write_trajectory(path: &Path, tr: &Trajectory) -> Result<()> {
    let Some(first) = tr.records.first() else { bail!("trajectory has no records") };
    let header = trajectory_header(first.measurement.v.len(), first.measurement.flows.len(), first.p_ofo.len());
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for r in &tr.records {
        row.clear();
        row.push(r.t.to_string());
        row.push(r.gap.to_string());
        row.extend(r.measurement.v.iter().map(f64::to_string));
        row.push(r.measurement.delta_theta.to_string());
        row.extend(r.measurement.flows.iter().map(f64::to_string));
        row.extend(r.p_ofo.iter().chain(&r.v_ofo).chain(&r.p_m).map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_events(path: &Path, log: &[LogEntry]) -> Result<()> {
    let mut s = String::new();
    for e in log {
        let _ = writeln!(s, "{:>10.3}  {}", e.t, e.message);
    }
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

/// Event times parsed back from an events log.
pub fn read_event_markers(path: &Path) -> Result<Vec<(f64, String)>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .filter_map(|l| {
            let l = l.trim_start();
            let (t, msg) = l.split_once("  ")?;
            let msg = msg.trim();
            let keep = msg.contains("tripped") || msg.contains("reclosed") || msg == "controller activated";
            keep.then(|| Some((t.parse().ok()?, msg.to_string())))?
        })
        .collect())
}

/// A numeric CSV held column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut columns = vec![Vec::new(); header.len()];
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            for (c, field) in rec.iter().enumerate() {
                let x = if field.is_empty() {
                    f64::NAN
                } else {
                    field.parse().with_context(|| format!("{}: row {}, column {}", path.display(), i + 2, header[c]))?
                };
                columns[c].push(x);
            }
        }
        Ok(Self { header, columns })
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.header.iter().position(|h| h == name).map(|i| self.columns[i].as_slice())
    }

    /// Columns whose name starts with `prefix_`, in file order.
    pub fn family(&self, prefix: &str) -> Vec<(&str, &[f64])> {
        let p = format!("{prefix}_");
        self.header
            .iter()
            .zip(&self.columns)
            .filter(|(h, _)| h.starts_with(&p))
            .map(|(h, c)| (h.as_str(), c.as_slice()))
            .collect()
    }
}
