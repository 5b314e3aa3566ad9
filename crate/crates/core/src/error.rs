use thiserror::Error;

/// Errors raised by classification, simulation and the command line front end.
#[derive(Debug, Error)]
pub enum CbdiError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("quadrature did not converge (estimate {estimate:e}, residual {residual:e})")]
    Quadrature { estimate: f64, residual: f64 },

    #[error("integral diverges; partial sums over successive decades: {partial_sums:?}")]
    Divergent { partial_sums: Vec<f64> },

    #[error("Levy measure has no mass above {0}")]
    EmptyMeasure(f64),

    #[error("derivative undefined at z = {0}")]
    UndefinedDerivative(f64),

    #[error("tail behaviour cannot be decided: {0}")]
    UndecidableTail(String),

    #[error(
        "jump rate {rate:e} per step at state {state:e} exceeds the limit after all halvings; use a larger eps_jump"
    )]
    RateOverflow { state: f64, rate: f64 },

    #[error("certification failure: {0}")]
    Certification(String),

    #[error("internal consistency failure: {0}")]
    Consistency(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CbdiError {
    /// Process exit code associated with the error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            CbdiError::InvalidParameter(_) | CbdiError::Config(_) | CbdiError::Io(_) => 2,
            CbdiError::Quadrature { .. }
            | CbdiError::Divergent { .. }
            | CbdiError::EmptyMeasure(_)
            | CbdiError::UndefinedDerivative(_)
            | CbdiError::UndecidableTail(_)
            | CbdiError::RateOverflow { .. }
            | CbdiError::Certification(_) => 3,
            CbdiError::Consistency(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CbdiError::InvalidParameter(_) => "invalid_parameter",
            CbdiError::Config(_) => "config",
            CbdiError::Quadrature { .. } => "quadrature",
            CbdiError::Divergent { .. } => "divergent",
            CbdiError::EmptyMeasure(_) => "empty_measure",
            CbdiError::UndefinedDerivative(_) => "undefined_derivative",
            CbdiError::UndecidableTail(_) => "undecidable_tail",
            CbdiError::RateOverflow { .. } => "rate_overflow",
            CbdiError::Certification(_) => "certification",
            CbdiError::Consistency(_) => "consistency",
            CbdiError::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, CbdiError>;
