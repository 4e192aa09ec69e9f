use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("grid alignment error: {0}")]
    GridAlignment(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("integration error: {0}")]
    Integration(String),

    #[error("simulation diverged at step {step} (path {path_index})")]
    Diverged { path_index: u64, step: usize },

    #[error("singular diffusion matrix at t = {time}, x = {state:?}")]
    SingularDiffusion { time: f64, state: Vec<f64> },

    #[error("solver unstable: {0}")]
    SolverUnstable(String),

    #[error("no contraction window found: smallest horizon {smallest_horizon} has Lipschitz constant {lipschitz}")]
    WindowNotFound { smallest_horizon: f64, lipschitz: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing dependency: {0}")]
    Dependency(String),
}

pub type Result<T> = std::result::Result<T, Error>;
