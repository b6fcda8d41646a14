//! Design-based estimation for simple multiple randomization designs (SMRDs)
//! in two-sided marketplaces.
//!
//! A design randomizes buyers and sellers independently, which places every
//! buyer-seller pair in one of four exposure groups. This crate provides
//! unadjusted and variance-optimal regression-adjusted estimators for contrasts
//! over those groups, their exact finite-population variances, conservative
//! confidence intervals, CLT diagnostics and a Monte Carlo harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod design;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod io;
pub mod moments;
pub mod numeric;
pub mod simulate;
pub mod variance;

pub use error::{Error, Result};

/// Schema version stamped on every report.
pub const SPEC_VERSION: &str = "1";
