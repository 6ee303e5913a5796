use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the registration pipeline and its IO layer.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("kernel bandwidth undefined: {0}")]
    BandwidthUndefined(String),

    #[error("kernel matrix not positive definite after maximum jitter (smallest eigenvalue {min_eig:e})")]
    KernelDegenerate { min_eig: f64 },

    #[error("thin-plate spline system is singular: {0}")]
    TpsDegenerate(String),

    #[error("view {view} is ill-conditioned: {reason}")]
    IllConditionedView { view: usize, reason: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("scale ambiguity unresolvable: every view was skipped")]
    ScaleUnresolvable,

    #[error("refinement diverged (cost {0})")]
    Diverged(f64),

    #[error("views cannot be registered: {0}")]
    Unregistrable(String),

    #[error("deformation is not guaranteed invertible: |a|/w = {ratio} exceeds {limit}")]
    NonInvertibleWarp { ratio: f64, limit: f64 },

    #[error("held-out region leaves no training correspondences")]
    EmptyTraining,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: u64, msg: String },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

impl Error {
    /// True for failures of the numerical core (as opposed to bad inputs).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::KernelDegenerate { .. }
                | Error::TpsDegenerate(_)
                | Error::IllConditionedView { .. }
                | Error::Numerical(_)
                | Error::ScaleUnresolvable
                | Error::Diverged(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
