use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("config: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("rank-deficient design matrix: column(s) {} linearly dependent on earlier columns", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("missing feature vectors for {} listing(s): {}", .ids.len(), preview(.ids))]
    MissingFeatures { ids: Vec<String> },

    #[error("series divergent: |rho|*||W||_inf = {norm} >= 1")]
    SeriesDivergent { norm: f64 },

    #[error("likelihood maximum at interval endpoint rho = {rho} (admissible ({lower}, {upper}))")]
    BoundaryOptimum { rho: f64, lower: f64, upper: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),
}

fn preview(ids: &[String]) -> String {
    const SHOWN: usize = 10;
    let mut s = ids.iter().take(SHOWN).cloned().collect::<Vec<_>>().join(", ");
    if ids.len() > SHOWN {
        s.push_str(", ...");
    }
    s
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, message: message.into() }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. } | Error::Parse { .. } | Error::InvalidInput(_) | Error::MissingFeatures { .. } => 3,
            Error::RankDeficient { .. }
            | Error::SeriesDivergent { .. }
            | Error::BoundaryOptimum { .. }
            | Error::Numeric(_) => 4,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            3 => "data",
            _ => "numeric",
        }
    }
}
