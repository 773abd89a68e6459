//! Grid and scenario file formats (JSON).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controls::{AgcParams, ExciterParams, GovernorParams, PssParams};
use crate::error::{Error, Result};
use crate::machines::MachineParams;
use crate::network::{Bus, GenLocation, Line, NetworkModel};
use crate::ofo::OfoConfig;

const IEEE39: &str = include_str!("../data/ieee39.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineRecord {
    pub id: usize,
    #[serde(flatten)]
    pub params: MachineParams,
}

/// On-disk grid description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFile {
    pub base_mva: f64,
    pub monitored_pair: (usize, usize),
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<GenLocation>,
    pub machines: Vec<MachineRecord>,
    /// One entry per generator, in generator order.
    pub governors: Vec<GovernorParams>,
    pub exciters: Vec<ExciterParams>,
    pub pss: Vec<PssParams>,
    pub agc: AgcParams,
}

/// Validated grid: network plus per-generator dynamic data, all in
/// generator order.
#[derive(Debug, Clone)]
pub struct Grid {
    pub network: NetworkModel,
    pub machines: Vec<MachineParams>,
    pub governors: Vec<GovernorParams>,
    pub exciters: Vec<ExciterParams>,
    pub pss: Vec<PssParams>,
    pub agc: AgcParams,
}

impl GridFile {
    pub fn into_grid(self) -> Result<Grid> {
        let network = NetworkModel::new(self.buses, self.lines, self.generators, self.base_mva, self.monitored_pair)?;
        let ng = network.n_gen();
        for (what, len) in [
            ("governors", self.governors.len()),
            ("exciters", self.exciters.len()),
            ("pss", self.pss.len()),
        ] {
            if len != ng {
                return Err(Error::InvalidModel(format!("{what} has {len} entries for {ng} generators")));
            }
        }
        let mut machines = Vec::with_capacity(ng);
        for g in network.generators() {
            let mut found = self.machines.iter().filter(|m| m.id == g.machine);
            let rec = found
                .next()
                .ok_or_else(|| Error::InvalidModel(format!("generator at bus {} references unknown machine {}", g.bus, g.machine)))?;
            if found.next().is_some() {
                return Err(Error::InvalidModel(format!("duplicate machine id {}", g.machine)));
            }
            rec.params.validate()?;
            machines.push(rec.params.clone());
        }
        let mut used: Vec<usize> = network.generators().iter().map(|g| g.machine).collect();
        used.sort_unstable();
        if used.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidModel("a machine is assigned to two generators".into()));
        }
        for p in &self.governors {
            p.validate()?;
        }
        for p in &self.exciters {
            p.validate()?;
        }
        for p in &self.pss {
            p.validate()?;
        }
        self.agc.validate(ng)?;
        Ok(Grid {
            network,
            machines,
            governors: self.governors,
            exciters: self.exciters,
            pss: self.pss,
            agc: self.agc,
        })
    }
}

impl Grid {
    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str::<GridFile>(s)?.into_grid()
    }

    pub fn from_json_bytes(b: &[u8]) -> Result<Self> {
        serde_json::from_slice::<GridFile>(b)?.into_grid()
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_bytes(&std::fs::read(path)?)
    }

    /// Generator ratings over the system base: converts generator-base
    /// active power to system per-unit.
    pub fn power_scale(&self) -> Vec<f64> {
        let base = self.network.base_power();
        self.machines.iter().map(|m| m.s / base).collect()
    }
}

/// The bundled IEEE 39-bus system.
pub fn ieee39() -> Result<Grid> {
    Grid::from_json_str(IEEE39)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "default_record")]
    pub record_every: f64,
}

fn default_dt() -> f64 {
    5e-3
}

fn default_record() -> f64 {
    0.1
}

/// Whole multiples of `dt` are required for the recording and sampling
/// periods; returns that multiple.
pub(crate) fn steps_per(period: f64, dt: f64, what: &str) -> Result<usize> {
    let k = (period / dt).round();
    if !(k >= 1.0 && (k * dt - period).abs() <= 1e-9 * period.max(1.0)) {
        return Err(Error::Config(format!("{what} ({period} s) must be a positive multiple of dt ({dt} s)")));
    }
    Ok(k as usize)
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config("sim.dt must be positive".into()));
        }
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return Err(Error::Config("sim.t_end must be non-negative".into()));
        }
        if !(self.record_every >= self.dt) {
            return Err(Error::Config("sim.record_every must be at least dt".into()));
        }
        steps_per(self.record_every, self.dt, "sim.record_every")?;
        if self.t_end / self.dt > 1e9 {
            return Err(Error::Config("too many steps".into()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

/// Fire only while |θ_from − θ_to| across the event's line (or the
/// monitored pair, for events without a line) is below the threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Guard {
    pub max_angle_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventKind {
    LineTrip { line: usize },
    LineReclose { line: usize },
    ActivateOfo,
    SetInput {
        #[serde(default)]
        p: Option<Vec<f64>>,
        #[serde(default)]
        v: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    #[serde(flatten)]
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard: Option<Guard>,
}

impl Event {
    pub fn line(&self) -> Option<usize> {
        match self.kind {
            EventKind::LineTrip { line } | EventKind::LineReclose { line } => Some(line),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub sim: SimConfig,
    #[serde(default)]
    pub events: Vec<Event>,
    #[serde(default)]
    pub ofo: OfoConfig,
}

impl Scenario {
    /// Parses without checking references into a grid.
    pub fn from_json_bytes(b: &[u8]) -> Result<Self> {
        let s: Self = serde_json::from_slice(b)?;
        s.sim.validate()?;
        s.ofo.validate()?;
        steps_per(s.ofo.sampling_period, s.sim.dt, "ofo.sampling_period")?;
        for e in &s.events {
            if !(e.time.is_finite() && e.time >= 0.0) {
                return Err(Error::Config(format!("event time {} must be non-negative", e.time)));
            }
            if let Some(g) = &e.guard {
                if !(g.max_angle_deg.is_finite() && g.max_angle_deg > 0.0) {
                    return Err(Error::Config("guard angle must be positive".into()));
                }
            }
        }
        if s.events.windows(2).any(|w| w[1].time < w[0].time) {
            return Err(Error::Config("events must be sorted by time".into()));
        }
        Ok(s)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Self::from_json_bytes(s.as_bytes())
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_bytes(&std::fs::read(path)?)
    }

    /// Checks event references against a grid.
    pub fn check_against(&self, grid: &Grid) -> Result<()> {
        let ng = grid.network.n_gen();
        for e in &self.events {
            if let Some(l) = e.line() {
                if grid.network.line_index(l).is_none() {
                    return Err(Error::Config(format!("event at {} s references unknown line {l}", e.time)));
                }
            }
            if let EventKind::SetInput { p, v } = &e.kind {
                for vec in [p, v].into_iter().flatten() {
                    if vec.len() != ng || vec.iter().any(|x| !x.is_finite()) {
                        return Err(Error::Config(format!(
                            "set_input at {} s needs {ng} finite values per vector",
                            e.time
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_grid_loads() {
        let g = ieee39().unwrap();
        assert_eq!(g.network.n_bus(), 39);
        assert_eq!(g.network.lines().len(), 46);
        assert_eq!(g.network.flow_lines().len(), 34);
        assert_eq!(g.network.n_gen(), 10);
        assert_eq!(g.network.monitored_pair(), (23, 24));
        assert_eq!(g.machines.len(), 10);
    }

    #[test]
    fn malformed_grid_names_location() {
        let err = Grid::from_json_str("{\n  \"base_mva\": \"a lot\"\n}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn missing_control_block_is_rejected() {
        let mut file: GridFile = serde_json::from_str(IEEE39).unwrap();
        file.pss.pop();
        assert!(matches!(file.into_grid(), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn scenario_round_trip_and_defaults() {
        let s = Scenario::from_json_str(
            r#"{"sim": {"t_end": 60},
                "events": [{"time": 10, "kind": "line_trip", "line": 38},
                           {"time": 40, "kind": "activate_ofo"},
                           {"time": 50, "kind": "line_reclose", "line": 38, "guard": {"max_angle_deg": 30}}]}"#,
        )
        .unwrap();
        assert_eq!(s.sim.dt, 5e-3);
        assert_eq!(s.sim.record_every, 0.1);
        assert_eq!(s.ofo.alpha, 3.0);
        assert_eq!(s.events[0].kind, EventKind::LineTrip { line: 38 });
        assert_eq!(s.events[2].guard, Some(Guard { max_angle_deg: 30.0 }));
        let again = Scenario::from_json_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn scenario_validation() {
        let bad = [
            r#"{"sim": {"t_end": 10, "dt": 0}}"#,
            r#"{"sim": {"t_end": 10, "record_every": 0.0123}}"#,
            r#"{"sim": {"t_end": 10}, "events": [{"time": 5, "kind": "activate_ofo"}, {"time": 1, "kind": "activate_ofo"}]}"#,
            r#"{"sim": {"t_end": 10}, "ofo": {"alpha": -1}}"#,
            r#"{"sim": {"t_end": 10}, "events": [{"time": 1, "kind": "explode"}]}"#,
        ];
        for b in bad {
            assert!(Scenario::from_json_str(b).is_err(), "{b}");
        }
        let s = Scenario::from_json_str(r#"{"sim": {"t_end": 10}, "events": [{"time": 1, "kind": "line_trip", "line": 99}]}"#).unwrap();
        assert!(s.check_against(&ieee39().unwrap()).is_err());
    }
}
