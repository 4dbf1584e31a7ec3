use std::path::PathBuf;

/// Errors raised by the simulators, controllers, optimizers and harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A rotation left the single-cover region of the logarithmic chart.
    #[error("rotation outside single-cover region: angle {angle:.6} rad")]
    RotationDomain { angle: f64 },

    #[error("simulation diverged at step {step}: {reason}")]
    SimulationDiverged { step: usize, reason: String },

    /// The commanded thrust vector is degenerate or points straight down.
    #[error("controller singular: {0}")]
    ControllerSingular(String),

    #[error("reference singular at t = {t:.4} s: desired velocity vanishes")]
    ReferenceSingular { t: f64 },

    /// The lateral car model divides by forward speed.
    #[error("car model singular: forward speed {speed:.4} m/s below minimum")]
    SingularModel { speed: f64 },

    #[error("optimizer diverged at step {step}: {reason}")]
    OptimizerDiverged { step: usize, reason: String },

    #[error("stream length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("non-finite evaluation in finite-difference oracle at coordinate {coord}")]
    NonFinite { coord: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error at {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
