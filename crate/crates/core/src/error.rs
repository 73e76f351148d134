use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("unknown bus id {0}")]
    UnknownBus(usize),

    #[error("unknown measurement reference {0}")]
    UnknownMeasurement(usize),

    #[error("power flow did not converge after {iterations} iterations (mismatch {mismatch:.3e})")]
    Divergence { iterations: usize, mismatch: f64 },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("system is unobservable: {0}")]
    Unobservable(String),

    #[error("state estimation did not converge after {iterations} iterations (last increment {increment:.3e})")]
    EstimatorDivergence { iterations: usize, increment: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("dataset generation failed: {0}")]
    Generation(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
