//! Simulation-based phylodynamic inference.
//!
//! The crate has two halves. The generative half ([`sim`]) draws epidemic
//! parameters from a prior, runs a birth-death-sampling process with
//! piecewise-constant rates, prunes the transmission history down to the
//! reconstructed phylogeny of sequenced infections and records the true
//! reproduction number, prevalence and cumulative incidence through time.
//!
//! The inferential half ([`model`]) is a neural Bayes estimator: a recursive
//! network folds a reconstructed [`tree::ReconTree`] into a fixed-length
//! embedding, and a prediction network maps that embedding, the tree height,
//! the mean infectious duration, a query time and a quantile level to
//! posterior quantiles of the three targets. Training minimises the pinball
//! loss with AdamW on top of the small reverse-mode kernel in [`nn`].
//! [`eval`] computes the accuracy and calibration summaries.

pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod sim;
pub mod tree;

mod fmt;

pub use error::{Error, Result};
pub use fmt::round_sig;
