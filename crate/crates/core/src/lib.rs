//! Fine-grained subgroup treatment effects in a randomized trial, shrunk
//! toward estimates constrained by coarser external subgroup results.
//!
//! The estimation path is
//! [`data`] → [`design`] → [`estimators`] → [`shrinkage`], with
//! [`comparators`] as benchmarks and [`simulation`] as the Monte Carlo harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod comparators;
pub mod data;
pub mod design;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod normal;
pub mod pipeline;
pub mod shrinkage;
pub mod simulation;

pub use error::{Error, ErrorCategory, Result};
