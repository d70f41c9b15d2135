use alloc::string::String;

/// Errors raised by the simulator core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A precondition on the mathematical domain failed (non-ergodic chain,
    /// violated bound regime, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error(
        "family generation exhausted {attempts} attempts; tightest realized levels \
         epsilon={best_epsilon}, epsilon1={best_epsilon1}"
    )]
    Generation {
        attempts: usize,
        best_epsilon: f64,
        best_epsilon1: f64,
    },

    #[error("bound regime violated: kappa*A/delta1 = {ratio} (must be < 1)")]
    BoundRegime { ratio: f64 },

    #[error("I - alpha*A_hat is not Schur stable (spectral radius {spectral_radius})")]
    Unstable { spectral_radius: f64 },

    #[error("iterate diverged at round {round} (norm {norm})")]
    Diverged { round: usize, norm: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidInput(alloc::format!($($arg)*))
    };
}

macro_rules! domain {
    ($($arg:tt)*) => {
        $crate::error::Error::Domain(alloc::format!($($arg)*))
    };
}

macro_rules! numeric {
    ($($arg:tt)*) => {
        $crate::error::Error::Numeric(alloc::format!($($arg)*))
    };
}

pub(crate) use {domain, invalid, numeric};
