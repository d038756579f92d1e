//! Smooth, shape-constrained quantile distributed-lag regression.
//!
//! Two penalized estimators of time-varying exposure effects at a quantile
//! level `τ`: a nearly-unimodal estimator (lag curves that rise to a mode and
//! then fall, with violations priced by `λ1`) and a nearly-concave estimator.
//! Both add a second-difference smoothness penalty weighted by `λ2`, and both
//! are computed with a prox-linear ADMM whose coefficient step reduces to exact
//! proximal operators.
//!
//! Around the solvers sit tuning-parameter selection, wild-bootstrap
//! confidence bands with critical-window extraction, elastic-net and ridge
//! competitors, and a synthetic data generator.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod admm;
pub mod baselines;
pub mod bootstrap;
pub mod error;
pub mod lagmodel;
pub mod linalg;
pub mod prox;
pub mod selection;
pub mod sim;
pub mod unimodal;

pub use error::{QdlagError, Result};
pub use lagmodel::{
    check_loss, concave_penalty, make_diff_operator, mean_check_loss, neg_part, objective,
    pos_part, shape_penalty, smoothness_penalty, unimodal_penalty, CovariateCoefficients,
    DifferenceOperator, LagCoefficients, ModeVector, PenaltyConfig, QuantileLevel, RegressionData,
    Shape,
};
