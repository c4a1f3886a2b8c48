use thiserror::Error;

/// Errors raised by the estimators, the bandwidth selector and the study harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModalError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no observation has positive kernel weight at {center}; the predictor bandwidth is too small here")]
    DegenerateWindow { center: f64 },

    #[error("local design is singular (condition estimate {condition:.3e}); fewer distinct points than coefficients in the window")]
    SingularDesign { condition: f64 },

    #[error("estimated error density is not concave at zero (g''(0) = {g2:.6e}); plug-in bandwidths are unusable")]
    NonconcaveAtZero { g2: f64 },

    #[error("plug-in curvature quantities are degenerate ({0}); bandwidth ratio is undefined")]
    ZeroCurvature(String),

    #[error("invalid plug-in quantities: {0}")]
    InvalidPlugin(String),

    #[error("{value} lies outside the fitted range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("bandwidth schedule violates the rate conditions: {0}")]
    RateViolation(String),

    #[error("every candidate bandwidth failed on at least one fold")]
    AllFitsFailed,

    #[error("{failed} of {total} replications failed")]
    TooManyFailures { failed: usize, total: usize },
}

impl ModalError {
    /// Stable machine-readable code for diagnostics.
    pub fn code(&self) -> &'static str {
        match self {
            ModalError::InvalidInput(_) => "E_INPUT",
            ModalError::DegenerateWindow { .. } => "E_DEGENERATE_WINDOW",
            ModalError::SingularDesign { .. } => "E_SINGULAR_DESIGN",
            ModalError::NonconcaveAtZero { .. } => "E_NONCONCAVE",
            ModalError::ZeroCurvature(_) => "E_ZERO_CURVATURE",
            ModalError::InvalidPlugin(_) => "E_INVALID_PLUGIN",
            ModalError::OutOfRange { .. } => "E_OUT_OF_RANGE",
            ModalError::RateViolation(_) => "E_RATE_VIOLATION",
            ModalError::AllFitsFailed => "E_ALL_FITS_FAILED",
            ModalError::TooManyFailures { .. } => "E_TOO_MANY_FAILURES",
        }
    }

    /// True for failures of the numerics (as opposed to bad user input).
    pub fn is_numerical(&self) -> bool {
        !matches!(
            self,
            ModalError::InvalidInput(_) | ModalError::OutOfRange { .. } | ModalError::RateViolation(_)
        )
    }
}

pub type Result<T, E = ModalError> = std::result::Result<T, E>;
