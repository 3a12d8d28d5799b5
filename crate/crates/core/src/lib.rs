//! Ivanov (quasi-solution), Morozov (residual) and Tikhonov regularization for
//! ill-posed operator equations `F(x) = y`, with discrepancy-type radius
//! choice, elliptic parameter-identification forward problems and the
//! experiment harness that checks bounds and convergence rates.

pub mod config;
pub mod error;
pub mod experiments;
pub mod forward;
pub mod grid;
pub mod param_choice;
pub mod regularizer;
pub mod solver;

pub use error::{Error, Result};
