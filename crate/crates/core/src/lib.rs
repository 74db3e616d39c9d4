//! Multilevel Monte Carlo with Ninomiya-Victoir and Giles-Szpruch couplings.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod calibrate;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod models;
pub mod oracle;
pub mod paths;
pub mod sampling;
pub mod schemes;

pub use error::{Error, Result};
