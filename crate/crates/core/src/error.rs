use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("quadrature did not converge on [{a}, {b}] after {depth} bisections (estimate {estimate:e}, error {error:e})")]
    Quadrature {
        a: f64,
        b: f64,
        depth: usize,
        estimate: f64,
        error: f64,
    },

    #[error("singular stationary system at ({x:.6}, {y:.6}): {detail}")]
    SingularSystem { x: f64, y: f64, detail: String },

    #[error("force evaluation is not real: |Im| = {imag:e} vs |F| = {magnitude:e}")]
    NonRealForce { imag: f64, magnitude: f64 },

    #[error("negative sector rate {rate:e} in sector {sector}")]
    NegativeRate { sector: usize, rate: f64 },

    #[error("time step {dt} outside (0, {max}] cavity lifetimes")]
    StepSize { dt: f64, max: f64 },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("trajectory spans {span} but one window needs {window}")]
    TooShort { span: f64, window: f64 },

    #[error("hash mismatch for {what}: expected {expected}, found {found}")]
    HashMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },

    #[error("parse error in {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Quadrature { .. }
                | Error::SingularSystem { .. }
                | Error::NonRealForce { .. }
                | Error::NegativeRate { .. }
        )
    }
}
