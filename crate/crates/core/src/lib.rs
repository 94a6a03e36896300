#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::too_many_arguments
)]

//! Predictor feedback for plants with input delay.
//!
//! The predictor integrates the plant `tau` seconds ahead with an explicit
//! Euler scheme whose grid count is chosen so that a computable bound on the
//! discretization error stays below a prescribed accuracy target. The crate
//! provides the plant abstractions, the input history, the predictor and its
//! bounds, the constant-selection pipelines for nonlinear and linear plants,
//! a hybrid closed-loop simulator and a reference integrator.

pub mod builtin;
pub mod cli;
pub mod config;
pub mod design;
pub mod error;
pub mod euler;
pub mod func;
pub mod history;
pub mod linear;
pub mod oracle;
pub mod sim;
pub mod system;
pub mod verify;

pub use error::{Error, Result};
