//! Continuous-state branching processes with drift interaction.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::should_implement_trait,
    clippy::needless_range_loop
)]

pub mod asymptotic;
pub mod classifier;
pub mod cli;
pub mod config;
pub mod drift;
pub mod error;
pub mod generator;
pub mod mechanism;
pub mod output;
pub mod passage;
pub mod quad;
pub mod rng;
pub mod simulator;

pub use error::{CbdiError, Result};
