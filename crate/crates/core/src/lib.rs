//! Simulation toolkit for evaluating few-shot learners: synthetic class
//! universes, task distributions, episodic learners, ranking and flip
//! analyses, coverage bounds and benchmark splits.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coverage;
pub mod error;
pub mod flip;
pub mod learners;
pub mod ranking;
pub mod rng;
pub mod scenario;
pub mod sampling;
pub mod splits;
pub mod task;
pub mod universe;

pub use error::{Error, Result};
