use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ofo_core::data::{ieee39, Grid, Scenario};
use ofo_core::sensitivity::Topology;

/// Everything one command needs to reproduce a run.
#[derive(Debug, Clone)]
pub struct RunManifest {
    /// `None` selects the bundled IEEE 39-bus grid.
    pub grid: Option<PathBuf>,
    pub scenario: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub topology: Topology,
}

impl RunManifest {
    /// Checks that input files exist and prepares the output directory.
    pub fn validate(&self) -> Result<()> {
        for path in self.grid.iter().chain(self.scenario.iter()) {
            if !path.is_file() {
                bail!(InputError(format!("{} does not exist", path.display())));
            }
        }
        fs::create_dir_all(&self.out)
            .with_context(|| format!("cannot create output directory {}", self.out.display()))?;
        let probe = self.out.join(".write-test");
        fs::write(&probe, b"").with_context(|| format!("{} is not writable", self.out.display()))?;
        let _ = fs::remove_file(probe);
        Ok(())
    }

    pub fn load_grid(&self) -> Result<Grid> {
        load_grid(self.grid.as_deref())
    }

    pub fn load_scenario(&self) -> Result<Scenario> {
        let path = self.scenario.as_deref().ok_or_else(|| InputError("--scenario is required".into()))?;
        Scenario::from_path(path).with_context(|| format!("reading scenario {}", path.display()))
    }
}

pub fn load_grid(path: Option<&Path>) -> Result<Grid> {
    match path {
        Some(p) => Grid::from_path(p).with_context(|| format!("reading grid {}", p.display())),
        None => Ok(ieee39()?),
    }
}

/// `nominal` or a line id.
pub fn parse_topology(s: &str) -> Result<Topology, String> {
    if s.eq_ignore_ascii_case("nominal") {
        return Ok(Topology::Nominal);
    }
    s.parse::<usize>()
        .map(Topology::Removed)
        .map_err(|_| format!("expected `nominal` or a line id, got `{s}`"))
}

/// Bad user input that is not a core model error.
#[derive(Debug)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}
