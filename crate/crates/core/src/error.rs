use thiserror::Error;

/// Errors raised across the laboratory.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument fell outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A value violated a documented invariant at construction or validation time.
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("no non-negative hyper-Erlang mixture on the given family matches the requested moments")]
    InfeasibleMatch,

    #[error("unstable queue: load rho = {rho} >= 1")]
    UnstableQueue { rho: f64 },

    #[error("transform denominator is numerically singular at s = {re}{im:+}i")]
    NearSingularDenominator { re: f64, im: f64 },

    #[error("order {order} outside supported range {min}..={max}")]
    OrderOutOfRange { order: u32, min: u32, max: u32 },

    #[error("quadrature did not converge: {0}")]
    QuadratureNonConvergent(String),

    #[error("insufficient samples: have {have}, need at least {need}")]
    InsufficientSamples { have: usize, need: usize },

    #[error("degenerate rate fit: {0}")]
    DegenerateFit(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Whether the error stems from bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Domain(_) | Error::Invalid(_) | Error::OrderOutOfRange { .. } | Error::UnstableQueue { .. }
        )
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Invalid(_) => "invalid",
            Error::InfeasibleMatch => "infeasible_match",
            Error::UnstableQueue { .. } => "unstable_queue",
            Error::NearSingularDenominator { .. } => "near_singular_denominator",
            Error::OrderOutOfRange { .. } => "order_out_of_range",
            Error::QuadratureNonConvergent(_) => "quadrature_non_convergent",
            Error::InsufficientSamples { .. } => "insufficient_samples",
            Error::DegenerateFit(_) => "degenerate_fit",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Invalid(format!("json: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
