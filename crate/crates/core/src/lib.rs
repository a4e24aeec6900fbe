//! Finite-volume simulator and estimate auditor for the ε-regularized doubly
//! degenerate nutrient-taxis system with logistic source on a rectangle.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod cli;
pub mod config;
pub mod error;
pub mod grid;
pub mod lab;
pub mod model;
pub mod snapshot;
pub mod stepper;
pub mod weak;

pub use error::{Error, Result};

/// Round-trippable float rendering used by every text artifact.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
