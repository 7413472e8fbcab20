//! Birth-death-sampling epidemic simulator.
//!
//! One realisation goes through [`prior::sample_prior`],
//! [`process::simulate_raw`] (conditioned by
//! [`process::condition_and_resample`]), [`prune::prune_to_reconstructed`]
//! and [`measure::measure`]; [`dataset::simulate_dataset`] repeats that per
//! record with derived seeds.

pub mod dataset;
pub mod measure;
pub mod piecewise;
pub mod prior;
pub mod process;
pub mod prune;

pub use dataset::{
    load_jsonl, read_jsonl, save_jsonl, simulate_dataset, simulate_dataset_with_stats, simulate_record, write_jsonl, DatasetConfig,
    SimRecord,
};
pub use measure::{measure, Measurement};
pub use piecewise::PiecewiseConstant;
pub use prior::{
    rates_from_params, sample_prior, summarize_prior, AltSamplingConfig, EpidemicParams, PriorConfig, PriorSummary, Rates,
    SimModel, Spread,
};
pub use process::{
    condition_and_resample, simulate_raw, Accepted, EventKind, RejectReason, Rejected, SimLimits,
    StopReason, TransmissionTree,
};
pub use prune::{prune_to_reconstructed, Reconstruction};
