use std::path::PathBuf;

use crate::Arm;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("malformed event file at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("stream {stream} is not sorted by timestamp at index {index}")]
    UnsortedStream { stream: usize, index: usize },

    #[error("{arm} stream is not sorted by timestamp at index {index}")]
    UnsortedArm { arm: &'static str, index: usize },

    #[error("{0}")]
    Estimator(String),

    #[error("gaussian fit failed to converge after {iterations} iterations (residual norm {residual_norm:.4e})")]
    FitNonConvergence { iterations: usize, residual_norm: f64 },

    #[error("gaussian fit is degenerate: {0}")]
    FitDegenerate(String),

    #[error("config error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },

    #[error("stage `{stage}` failed (seed {seed}): {source}")]
    Stage {
        stage: &'static str,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn unsorted_arm(arm: Arm, index: usize) -> Self {
        Error::UnsortedArm { arm: arm.as_str(), index }
    }

    /// True for errors caused by the user's configuration rather than the run.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config { .. } | Error::InvalidParameter(_) => true,
            Error::Stage { source, .. } => matches!(**source, Error::Config { .. }),
            _ => false,
        }
    }
}
