//! Neural Bayes estimator over reconstructed trees.
//!
//! A tree is folded bottom-up into an `n`-vector by a shared network `g`:
//! a leaf becomes `ELU([depth/h, branch/h, 0, ..])` and an internal node
//! `g([ELU([depth/h, branch/h]), left, right])`, with `h` the height of the
//! whole tree and the root's branch taken as 0. A second network maps
//! `[embedding, h, sigma_inv/h, t/h, tau]` to the `tau`-quantiles of
//! `(R_eff, log10 prevalence, log10 cumulative incidence)` at `t` days
//! before the most recent sample, with a softplus on the first output.

mod config;
mod forward;
mod network;
mod train;

pub use config::{BtuConfig, PredConfig, TauSampling, TrainConfig, TrainMode};
pub use network::{NbeModel, Normalization, QuantileEstimate, QuantileQuery, CHANNEL_ORDER};
pub use train::{fine_tune, target_means, train, validation_loss, EpochStats, TrainMeta, TrainReport, VALIDATION_TAUS};
