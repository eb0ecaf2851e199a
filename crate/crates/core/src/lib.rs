//! Kernel ridge regression in batch and online modes, with machine checks
//! of the exact identity relating the two:
//!
//! ```text
//! Σ (γ_t − y_t)² / (1 + d_t/a)  =  min_f ( Σ (f(x_t) − y_t)² + a‖f‖² )  =  a Yᵀ(K + aI)⁻¹Y
//! ```
//!
//! The crate also audits the loss bounds that follow from it and replays
//! linear ridge regression as a Bayesian mixture of Gaussian experts.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bayes;
pub mod bounds;
pub mod error;
pub mod identity;
pub mod kernels;
pub mod pdlinalg;
pub mod regression;
pub mod scenarios;

pub use error::{Error, Result};
pub use identity::{certify, IdentityCertificate};
pub use kernels::{KernelSpec, Signal};
pub use regression::{fit_batch, run_online, BatchModel, OnlineTrace, Sample};
