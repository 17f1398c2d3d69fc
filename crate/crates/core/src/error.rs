use thiserror::Error;

/// Errors raised by the reference kernels, scheduler and performance model.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("invalid schedule: {0}")]
    ScheduleInvalid(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
