use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: column `{column}` not found")]
    Schema { column: String },

    #[error("parse error at data row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid basis specification: {0}")]
    Spec(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular design (condition estimate {condition:.3e})")]
    SingularDesign { condition: f64 },

    #[error("degenerate weights: all weights are zero")]
    DegenerateWeights,

    #[error("weak identification: {context} (condition estimate {condition:.3e})")]
    WeakIdentification { context: String, condition: f64 },

    #[error("degenerate instrument variation: {0}")]
    DegenerateInstrument(String),

    #[error("binary regression did not converge after {iterations} iterations (score norm {score_norm:.3e})")]
    NonConvergence { iterations: usize, score_norm: f64 },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("unknown estimator `{name}`; valid estimators are: {valid}")]
    UnknownEstimator { name: String, valid: String },

    #[error("unreliable bootstrap: {failed} of {total} resamples failed")]
    UnreliableBootstrap { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the estimation itself, as opposed to bad input or configuration.
    pub fn is_estimation_failure(&self) -> bool {
        matches!(
            self,
            Error::SingularDesign { .. }
                | Error::DegenerateWeights
                | Error::WeakIdentification { .. }
                | Error::DegenerateInstrument(_)
                | Error::NonConvergence { .. }
                | Error::UnreliableBootstrap { .. }
        )
    }

    /// Short machine-readable tag used in structured error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema { .. } => "schema",
            Error::Parse { .. } => "parse",
            Error::Spec(_) => "spec",
            Error::InvalidInput(_) => "invalid_input",
            Error::SingularDesign { .. } => "singular_design",
            Error::DegenerateWeights => "degenerate_weights",
            Error::WeakIdentification { .. } => "weak_identification",
            Error::DegenerateInstrument(_) => "degenerate_instrument",
            Error::NonConvergence { .. } => "non_convergence",
            Error::Unsupported(_) => "unsupported",
            Error::UnknownEstimator { .. } => "unknown_estimator",
            Error::UnreliableBootstrap { .. } => "unreliable_bootstrap",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
