use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("invalid surface: {0}")]
    Domain(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("linear solve failed: {0}")]
    Solver(String),
    #[error("no convergence: {0}")]
    Convergence(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("format: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, FlowError>;
