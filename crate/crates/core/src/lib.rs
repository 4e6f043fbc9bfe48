//! Two-stage sparse direction-of-arrival estimation for incoherently
//! distributed sources on a partly calibrated uniform linear array.
//!
//! Stage one fits the calibrated sub-aperture, stage two estimates and
//! removes the gain-phase errors of the remaining sensors and refines the
//! directions over the full aperture with sparse total least squares.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod array_model;
pub mod covariance;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod scene_sim;
pub mod sparse_opt;

pub use error::{Error, ErrorCategory, Result};
