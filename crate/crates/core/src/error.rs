use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("enumeration needs {count} assignments, cap is {cap}")]
    CapExceeded { count: u128, cap: u128 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("group {0} has fewer than two buyers or sellers")]
    DegenerateGroup(&'static str),

    #[error("singular system (condition estimate {condition:.3e})")]
    SingularSystem { condition: f64 },

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("missing pair: buyer {buyer}, seller {seller}")]
    MissingPair { buyer: String, seller: String },

    #[error("inconsistent treatment for {side} {id}")]
    InconsistentTreatment { side: &'static str, id: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the CLI: 1 validation, 2 numerical, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::SingularSystem { .. } | Error::RankDeficient(_) | Error::ZeroVariance(_) | Error::Numerical(_) => 2,
            Error::Io { .. } => 3,
            _ => 1,
        }
    }
}
