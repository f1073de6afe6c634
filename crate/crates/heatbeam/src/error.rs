use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("trace compatibility violated: {0}")]
    TraceViolation(String),
    #[error("weight construction failed: {0}")]
    WeightConstruction(String),
    #[error("singular step matrix for Fourier mode {mode}")]
    SingularStep { mode: usize },
    #[error("inadmissible combination: {0}")]
    Inadmissible(String),
    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:e})")]
    CgNotConverged { iterations: usize, residual: f64 },
    #[error("resource limit: {0}")]
    ResourceLimit(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
