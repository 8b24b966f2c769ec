use std::fmt;

/// Result alias used throughout the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Diagnostics attached to a failed implicit solve.
#[derive(Clone, Debug, PartialEq)]
pub struct StallDiagnostics {
    pub iterations: usize,
    pub residual: f64,
    /// Smallest contact-pair distance at the last accepted iterate, if any pair was active.
    pub worst_pair_distance: Option<f64>,
    pub min_tet_volume: f64,
}

impl fmt::Display for StallDiagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "line search reached zero step after {} iterations (residual {:.3e} N, min tet volume {:.3e} m^3",
            self.iterations, self.residual, self.min_tet_volume
        )?;
        if let Some(d) = self.worst_pair_distance {
            write!(f, ", closest pair {d:.3e} m")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("{path}:{line}: {msg}")]
    Format { path: String, line: usize, msg: String },
    #[error("non-finite or inverted deformation gradient in tet {tet}")]
    Numerical { tet: usize },
    #[error("solver stall: {0}")]
    SolverStall(Box<StallDiagnostics>),
    #[error("integration error: {0}")]
    Integration(String),
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("environment needs reset after a failed step")]
    NeedsReset,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
