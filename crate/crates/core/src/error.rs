use thiserror::Error;

/// Errors surfaced by the simulation, measure-change and solver layers.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("simulation diverged (non-finite state) at path {path}, step {step}")]
    SimulationDiverged { path: usize, step: usize },

    #[error("index out of range: {0}")]
    IndexError(String),

    #[error("singular volatility matrix: {0}")]
    SingularVolatility(String),

    #[error("invalid jump kernel: {0}")]
    InvalidJumpKernel(String),

    #[error("degenerate jump model: {0}")]
    DegenerateJumpModel(String),

    #[error("density exponent is non-finite at path {path}, step {step}")]
    DensityOverflow { path: usize, step: usize },

    #[error("regression design is singular or non-finite at step {step}")]
    RegressionSingular { step: usize },

    #[error("Picard iteration did not converge after {} sweeps; gap history {gaps:?}", gaps.len() + 1)]
    PicardDiverged { gaps: Vec<f64> },

    #[error("invalid market specification: {0}")]
    InvalidMarket(String),

    #[error("unsupported configuration: {0}")]
    UnsupportedConfiguration(String),

    #[error("invalid numeraire: {0}")]
    InvalidNumeraire(String),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),
}

pub type Result<T> = std::result::Result<T, Error>;
