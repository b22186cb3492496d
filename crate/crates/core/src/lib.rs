//! Hard-input-constrained stochastic receding-horizon control.
//!
//! Policies take the form `u = η + Θ 𝔢(w)`: an open-loop part plus a strictly
//! causal feedback on bounded functions of past noise. The crate builds the
//! lifted model, estimates the moment matrices of the basis, solves the convex
//! program for `(η, Θ)`, simulates closed loops against classical baselines and
//! computes a mean-square boundedness certificate.

// `!(x > 0.0)` is used on purpose so that NaN is rejected with the bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod error;
pub mod linalg;
pub mod lqg;
pub mod model;
pub mod moments;
pub mod noise;
pub mod optimizer;
pub mod policy;
pub mod quadrature;
pub mod simulator;
pub mod special;
pub mod stability;
pub mod stats;

pub use error::{Error, Result};
