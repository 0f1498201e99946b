use thiserror::Error;

use crate::scaling::SinkhornTrace;

pub type Result<T> = std::result::Result<T, TotError>;

/// Every failure names the contract it violated.
#[derive(Debug, Error)]
pub enum TotError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("mode index {mode} out of range for an order-{order} tensor")]
    ModeOutOfRange { mode: usize, order: usize },

    #[error("degenerate slice: mode {mode}, index {index} has zero slice sum")]
    DegenerateSlice { mode: usize, index: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("contract violation ({contract}): {detail}")]
    Contract {
        contract: &'static str,
        detail: String,
    },

    #[error(
        "scaling did not converge within {max_iter} iterations (last residual {last_residual:e})"
    )]
    NonConvergence {
        max_iter: usize,
        last_residual: f64,
        trace: Box<SinkhornTrace>,
    },

    #[error("linear program infeasible: {0}")]
    Infeasible(String),

    #[error("linear program too large: {variables} variables exceeds cap {cap}")]
    SizeCap { variables: usize, cap: usize },

    #[error("inner block minimizer failed at step {step}: {detail}")]
    InnerMinimizer { step: usize, detail: String },
}

impl TotError {
    pub(crate) fn contract(contract: &'static str, detail: impl Into<String>) -> Self {
        TotError::Contract {
            contract,
            detail: detail.into(),
        }
    }

    /// True for failures caused by iteration caps rather than bad input.
    pub fn is_non_convergence(&self) -> bool {
        matches!(self, TotError::NonConvergence { .. })
    }
}
