use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("simulation diverged at step {step} (particle {particle})")]
    Diverged { step: usize, particle: usize },
    #[error("missing capability: {0}")]
    Capability(String),
    #[error("ill-conditioned system (condition estimate {condition:e})")]
    Conditioning { condition: f64 },
    #[error("quadrature resolution too coarse: eigenvalue {eigenvalue:e}")]
    Quadrature { eigenvalue: f64 },
    #[error("data error: {0}")]
    Data(String),
    #[error("rate fit failed: {0}")]
    Fit(String),
    #[error("malformed input: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Usage-class errors are the caller's fault; everything else is a data or numerical failure.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Domain(_))
    }
}
