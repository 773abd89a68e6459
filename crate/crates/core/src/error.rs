use thiserror::Error;

/// Errors produced by the grid model, solvers, and simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("line {line} has zero series impedance")]
    DegenerateLine { line: usize },

    #[error("power flow did not converge after {iterations} iterations (max mismatch {residual:.3e} p.u.)")]
    PowerFlowDiverged { iterations: usize, residual: f64 },

    #[error("power flow Jacobian is singular; operating point is close to voltage collapse")]
    SingularJacobian,

    #[error("machine parameter error: {0}")]
    MachineParam(String),

    #[error("machine initialization failed: {0}")]
    Init(String),

    #[error("rotor speed collapsed (omega = {omega:.4})")]
    SpeedCollapse { omega: f64 },

    #[error("network is islanded; disconnected buses {component:?}")]
    Islanding { component: Vec<usize> },

    #[error("singular dynamic network matrix")]
    SingularNetwork,

    #[error("state blowup at t = {t:.3} s")]
    Instability { t: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
