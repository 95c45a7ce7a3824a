use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite function value at x = {x}")]
    Evaluation { x: f64 },

    #[error("{what} did not converge after {iterations} iterations (best = {best})")]
    Convergence {
        what: String,
        iterations: usize,
        best: f64,
    },

    #[error("bracket [{lo}, {hi}] does not contain a sign change")]
    Bracket { lo: f64, hi: f64 },

    #[error("invalid bracket [{lo}, {hi}]")]
    InvalidBracket { lo: f64, hi: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("eigenvalue gap {gap:e} below threshold; gradient undefined")]
    Degeneracy { gap: f64 },

    #[error("rank error: {patches} patches for patch dimension {dim}")]
    Rank { dim: usize, patches: usize },

    #[error("zero variance input")]
    Variance,

    #[error("zero-norm input")]
    Norm,

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn convergence(what: impl Into<String>, iterations: usize, best: f64) -> Self {
        Error::Convergence {
            what: what.into(),
            iterations,
            best,
        }
    }

    /// True for convergence-type failures (mapped to a distinct CLI exit code).
    pub fn is_convergence(&self) -> bool {
        matches!(self, Error::Convergence { .. })
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
