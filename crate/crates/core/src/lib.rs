//! Mixture-weight estimation that blends a historical prior with the
//! information carried by the observed market portfolio.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backtest;
pub mod cli;
pub mod equilibrium;
pub mod error;
pub mod estimator;
pub mod gmm;
pub mod io;
pub mod linalg;
pub mod qp;
pub mod simplex;
pub mod simulation;

pub use error::{Error, Result};
