use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {name}: expected {expected}, got {got}")]
    Dimension {
        name: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("Newton iteration did not converge after {iterations} iterations (last iterate {last_re} + {last_im}i)")]
    NewtonDivergence {
        iterations: usize,
        last_re: f64,
        last_im: f64,
    },

    #[error("closed loop is not exponentially stable (spectral abscissa {abscissa}); final values are undefined")]
    Unstable { abscissa: f64 },

    #[error("limit undefined: {0}")]
    LimitUndefined(String),

    #[error("augmented pair is not controllable")]
    Uncontrollable,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("tuning failed: no candidate with finite cost was found")]
    TuneFailed,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(name: &'static str, expected: (usize, usize), got: (usize, usize)) -> Error {
    Error::Dimension {
        name,
        expected: format!("{}x{}", expected.0, expected.1),
        got: format!("{}x{}", got.0, got.1),
    }
}
