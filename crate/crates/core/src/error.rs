use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed JSON or a schema mismatch; the message carries serde's line/column context.
    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid graph: {}", .0.join("; "))]
    InvalidGraph(Vec<String>),

    #[error("unknown vertex `{0}`")]
    UnknownVertex(String),

    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("gate counts must be even and at least 2 (terminal {terminal} has {count})")]
    OddGateCount { terminal: usize, count: usize },

    #[error(
        "hitting-time system for component {component}, target `{target}` is ill-conditioned \
         (residual {residual:e})"
    )]
    Conditioning {
        component: usize,
        target: String,
        residual: f64,
    },

    #[error("value iteration did not converge within {0} iterations")]
    NoConvergence(usize),

    #[error("instance too large: {0} deterministic strategies (limit 1e6)")]
    TooLarge(u128),

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
