//! Nonparametric modal regression.
//!
//! Estimates the conditional mode `Mode(Y | X = x)` with local polynomial
//! kernel objectives maximised by a modal EM algorithm, selects bandwidths by
//! a plug-in rule, and extends the estimator to varying-coefficient models.
//! Baseline mean, Huber and median smoothers and a Monte-Carlo study harness
//! are included for comparison.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bandwidth;
pub mod baselines;
pub mod error;
pub mod kernels;
pub mod modal_lpr;
pub mod stats;
pub mod study;
pub mod varying_coeff;

mod em;
mod linalg;

pub use error::{ModalError, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/modal-regression.md")]
    mod modal_regression {}
    #[doc = include_str!("../../../book/src/bandwidths.md")]
    mod bandwidths {}
    #[doc = include_str!("../../../book/src/varying-coefficient.md")]
    mod varying_coefficient {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/studies.md")]
    mod studies {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
