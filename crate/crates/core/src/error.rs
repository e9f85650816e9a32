use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown system `{0}`")]
    UnknownSystem(String),

    #[error("system `{system}` has no parameter `{name}`")]
    UnknownParameter { system: String, name: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rank-deficient local design at t = {t}: {count} observations with positive weight, need {needed}")]
    RankDeficient { t: f64, count: usize, needed: usize },

    #[error("singular system ({context}), condition number {condition:e}")]
    Singular { context: String, condition: f64 },

    #[error("forward solve diverged at t = {t}")]
    Divergence { t: f64 },

    #[error("coordinate descent did not converge after {sweeps} sweeps (lambda = {lambda:e})")]
    LassoNonConvergence { sweeps: usize, lambda: f64 },

    #[error("zero true value for parameter `{0}`; relative metrics undefined")]
    ZeroTruth(String),

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
