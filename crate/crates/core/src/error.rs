use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine reports.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument violates an operation's precondition.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unknown vertex `{0}`")]
    UnknownVertex(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("agent `{vertex}` failed: {message}")]
    Agent { vertex: String, message: String },

    /// The propagation residual grew monotonically for the whole patience window.
    #[error("propagation diverged after {iterations} iterations (residual {residual:e})")]
    Diverged { iterations: usize, residual: f64 },

    /// `M * L` already exceeds the initial convergence rate.
    #[error("no safe step: M*L = {demand:e} exceeds -ln(alpha) = {supply:e}")]
    NoSafeStep { demand: f64, supply: f64 },

    #[error("signal space `{0}` has no order")]
    UnorderedSpace(String),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("no path from `{from}` to `{to}`")]
    NoPath { from: String, to: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Short machine-readable category, used for CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::UnknownVertex(_) => "unknown_vertex",
            Error::InvalidGraph(_) => "invalid_graph",
            Error::Agent { .. } => "agent",
            Error::Diverged { .. } => "diverged",
            Error::NoSafeStep { .. } => "no_safe_step",
            Error::UnorderedSpace(_) => "unordered_space",
            Error::InsufficientSamples(_) => "insufficient_samples",
            Error::NoPath { .. } => "no_path",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
