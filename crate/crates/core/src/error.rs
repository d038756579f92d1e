use thiserror::Error;

/// Errors raised by model construction, solvers and inference routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum QdlagError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("covariate matrix is rank deficient; columns {columns:?} are linearly dependent on earlier columns")]
    Singular { columns: Vec<usize> },

    #[error("inner solver did not converge after {iterations} iterations (primal {primal_resid:.3e}, dual {dual_resid:.3e})")]
    InnerNonConvergence {
        iterations: usize,
        primal_resid: f64,
        dual_resid: f64,
        last_iterate: Vec<f64>,
    },

    #[error("model selection failed: {0}")]
    Selection(String),
}

pub type Result<T> = std::result::Result<T, QdlagError>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(QdlagError::Dimension(msg.into()))
}

pub(crate) fn param_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(QdlagError::InvalidParameter(msg.into()))
}
