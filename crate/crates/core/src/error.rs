use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schedule spec: {0}")]
    InvalidSpec(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("step index {t} out of range [1, {max}]")]
    IndexOutOfRange { t: usize, max: usize },

    #[error("alpha_bar underflowed to zero at t = {t}; T is too large for the chosen betas")]
    Underflow { t: usize },

    #[error("magnitude r = {r} is never reached on this schedule (r_hat(T) = {r_hat_end})")]
    MagnitudeNotReached { r: f64, r_hat_end: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code: 2 for config errors, 3 for numeric aborts, 4 for i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidSpec(_)
            | Error::InvalidParameter(_)
            | Error::ShapeMismatch(_)
            | Error::ConfigMismatch(_)
            | Error::Config(_) => 2,
            Error::IndexOutOfRange { .. }
            | Error::Underflow { .. }
            | Error::MagnitudeNotReached { .. }
            | Error::Domain(_)
            | Error::DegenerateGrid(_)
            | Error::NonFinite(_) => 3,
            Error::Io(_) => 4,
        }
    }
}
