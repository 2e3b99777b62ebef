//! Multipath-based RF SLAM with master virtual anchors.
//!
//! The crate bundles exact mirror geometry ([`geometry`]), a synthetic world
//! ([`scenario`]), measurement-to-feature association ([`association`]), the
//! particle filter with bootstrap and robust mixture proposals
//! ([`inference`]), evaluation metrics ([`metrics`]) and a Monte Carlo
//! harness ([`harness`]).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod association;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod inference;
pub mod metrics;
pub mod rng;
pub mod scenario;

pub use error::{Error, Result};
