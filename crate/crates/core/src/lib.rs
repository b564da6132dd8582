//! Simulation of position- and selection-biased click logs over
//! learning-to-rank data, and estimators that learn unbiased rankers from
//! them.
//!
//! The central estimator decomposes the click-log likelihood into an
//! unbiased relevance term (fit on propensity-reweighted clicks), a
//! conditional selection term and a selection term for documents that were
//! cut off below the top-k. It comes in a pointwise linear form
//! ([`estimators::train_cld`]) and a pairwise neural form
//! ([`estimators::train_cld_pair`]).

// Validation uses `!(x > 0.0)` style checks on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clicksim;
pub mod dataset;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod numerics;
pub mod policy;

pub use error::{Error, Result};
