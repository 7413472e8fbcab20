//! Simulated datasets and their JSON-lines representation.
//!
//! One record per line:
//!
//! ```text
//! {"seed":7,"sigma":0.16,"t_present":41.2,"t_stop":45,"newick":"(tip0:1,tip1:2);",
//!  "measurements":[{"t":3.1,"n_prev":4,"n_cum":6,"reff":2.2}],
//!  "truth":{"reff":{"times":[..],"values":[..]},"p_psi":{"times":[..],"values":[..]}}}
//! ```
//!
//! Floats are rounded to 12 significant digits.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::measure::{measure, Measurement};
use super::piecewise::PiecewiseConstant;
use super::prior::{sample_prior, EpidemicParams, PriorConfig, SimModel};
use super::process::{condition_and_resample, SimLimits};
use super::prune::prune_to_reconstructed;
use crate::error::{Error, Result};
use crate::fmt::round_sig;
use crate::tree::ReconTree;

pub const JSON_DIGITS: usize = 12;

/// One accepted realisation of the process.
#[derive(Debug, Clone, PartialEq)]
pub struct SimRecord {
    pub seed: u64,
    pub sigma: f64,
    pub t_present: f64,
    pub t_stop: u32,
    pub tree: ReconTree,
    pub measurements: Vec<Measurement>,
    pub truth: EpidemicParams,
}

impl SimRecord {
    /// Time of the tree's root on the simulation clock.
    pub fn t_mrca(&self) -> f64 {
        self.t_present - self.tree.height()
    }

    pub fn to_json_line(&self) -> Result<String> {
        let r = |x: f64| round_sig(x, JSON_DIGITS);
        let pc = |f: &PiecewiseConstant| PiecewiseJson {
            times: f.times.iter().map(|&x| r(x)).collect(),
            values: f.values.iter().map(|&x| r(x)).collect(),
        };
        let json = RecordJson {
            seed: self.seed,
            sigma: r(self.sigma),
            t_present: r(self.t_present),
            t_stop: self.t_stop,
            newick: self.tree.to_newick(),
            measurements: self
                .measurements
                .iter()
                .map(|m| MeasurementJson {
                    t: r(m.t),
                    n_prev: m.n_prev,
                    n_cum: m.n_cum,
                    reff: r(m.reff),
                })
                .collect(),
            truth: TruthJson {
                reff: pc(&self.truth.reff),
                p_psi: pc(&self.truth.p_psi),
            },
        };
        Ok(serde_json::to_string(&json)?)
    }

    pub fn from_json_line(line: &str) -> Result<SimRecord> {
        let json: RecordJson = serde_json::from_str(line)?;
        let tree = ReconTree::parse_newick(&json.newick)?;
        let truth = EpidemicParams {
            reff: PiecewiseConstant::new(json.truth.reff.times, json.truth.reff.values)?,
            p_psi: PiecewiseConstant::new(json.truth.p_psi.times, json.truth.p_psi.values)?,
            sigma: json.sigma,
            t_stop: json.t_stop,
        };
        Ok(SimRecord {
            seed: json.seed,
            sigma: json.sigma,
            t_present: json.t_present,
            t_stop: json.t_stop,
            tree,
            measurements: json
                .measurements
                .into_iter()
                .map(|m| Measurement {
                    t: m.t,
                    n_prev: m.n_prev,
                    n_cum: m.n_cum,
                    reff: m.reff,
                })
                .collect(),
            truth,
        })
    }

    /// The record exactly as it reads back from its JSON line.
    pub fn canonical(&self) -> Result<SimRecord> {
        SimRecord::from_json_line(&self.to_json_line()?)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PiecewiseJson {
    times: Vec<f64>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthJson {
    reff: PiecewiseJson,
    p_psi: PiecewiseJson,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeasurementJson {
    t: f64,
    n_prev: u64,
    n_cum: u64,
    reff: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordJson {
    seed: u64,
    sigma: f64,
    t_present: f64,
    t_stop: u32,
    newick: String,
    measurements: Vec<MeasurementJson>,
    truth: TruthJson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_records: usize,
    /// Measurements per record (J).
    pub measurements_per_record: usize,
    pub model: SimModel,
    pub prior: PriorConfig,
    pub limits: SimLimits,
    pub max_rejections: usize,
    /// Record `i` is simulated from seed `first_seed + i`.
    pub first_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_records: 100,
            measurements_per_record: 10,
            model: SimModel::Standard,
            prior: PriorConfig::default(),
            limits: SimLimits::default(),
            max_rejections: 10_000,
            first_seed: 0,
        }
    }
}

/// Simulate one record from its own seed. Returns the record and the number
/// of rejected simulations that preceded it.
pub fn simulate_record(seed: u64, cfg: &DatasetConfig) -> Result<(SimRecord, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let accepted = condition_and_resample(
        |r| sample_prior(&cfg.prior, &cfg.model, r),
        &cfg.limits,
        cfg.max_rejections,
        &mut rng,
    )?;
    let rec = prune_to_reconstructed(&accepted.tree)?;
    let measurements = measure(
        &accepted.tree,
        &accepted.params,
        rec.t_present,
        cfg.measurements_per_record,
        &mut rng,
    );
    let record = SimRecord {
        seed,
        sigma: accepted.params.sigma,
        t_present: rec.t_present,
        t_stop: accepted.params.t_stop,
        tree: rec.tree,
        measurements,
        truth: accepted.params,
    };
    Ok((record.canonical()?, accepted.rejections))
}

/// Simulate `cfg.n_records` records in parallel. Output order follows the
/// record index and every record is already in canonical (serialized)
/// precision.
pub fn simulate_dataset(cfg: &DatasetConfig) -> Result<Vec<SimRecord>> {
    simulate_dataset_with_stats(cfg).map(|(records, _)| records)
}

/// As [`simulate_dataset`], also returning the total number of rejections.
pub fn simulate_dataset_with_stats(cfg: &DatasetConfig) -> Result<(Vec<SimRecord>, usize)> {
    if cfg.n_records == 0 {
        return Err(Error::InvalidArgument("n_records must be at least 1".into()));
    }
    let results: Vec<(SimRecord, usize)> = (0..cfg.n_records as u64)
        .into_par_iter()
        .map(|i| simulate_record(cfg.first_seed + i, cfg))
        .collect::<Result<_>>()?;
    let rejections = results.iter().map(|(_, r)| r).sum();
    Ok((results.into_iter().map(|(rec, _)| rec).collect(), rejections))
}

pub fn write_jsonl<W: Write>(mut out: W, records: &[SimRecord]) -> Result<()> {
    for rec in records {
        writeln!(out, "{}", rec.to_json_line()?)?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<SimRecord>> {
    input
        .lines()
        .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
        .map(|l| SimRecord::from_json_line(&l?))
        .collect()
}

pub fn save_jsonl(path: impl AsRef<Path>, records: &[SimRecord]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    write_jsonl(&mut out, records)?;
    out.flush()?;
    Ok(())
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<SimRecord>> {
    let file = std::fs::File::open(path)?;
    read_jsonl(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::prior::AltSamplingConfig;

    #[test]
    fn same_seed_same_bytes() {
        let cfg = DatasetConfig {
            n_records: 8,
            first_seed: 42,
            ..Default::default()
        };
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_jsonl(&mut a, &simulate_dataset(&cfg).unwrap()).unwrap();
        write_jsonl(&mut b, &simulate_dataset(&cfg).unwrap()).unwrap();
        assert_eq!(a, b);
        let back = read_jsonl(&a[..]).unwrap();
        let mut c = Vec::new();
        write_jsonl(&mut c, &back).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn json_line_has_expected_fields() {
        let cfg = DatasetConfig {
            n_records: 1,
            measurements_per_record: 3,
            first_seed: 5,
            ..Default::default()
        };
        let rec = &simulate_dataset(&cfg).unwrap()[0];
        let value: serde_json::Value = serde_json::from_str(&rec.to_json_line().unwrap()).unwrap();
        let obj = value.as_object().unwrap();
        let keys: Vec<&str> = obj.keys().map(String::as_str).collect();
        for k in ["seed", "sigma", "t_present", "t_stop", "newick", "measurements", "truth"] {
            assert!(keys.contains(&k), "missing {k}");
        }
        assert_eq!(obj["measurements"].as_array().unwrap().len(), 3);
        assert!(obj["truth"]["reff"]["times"].is_array());
        assert!(obj["truth"]["p_psi"]["values"].is_array());
        assert_eq!(obj["seed"], 5);
    }

    #[test]
    fn records_satisfy_invariants() {
        let cfg = DatasetConfig {
            n_records: 30,
            first_seed: 1000,
            ..Default::default()
        };
        for rec in simulate_dataset(&cfg).unwrap() {
            assert!(rec.tree.tip_count() >= 2);
            assert!(rec.tree.tip_count() <= 1000);
            assert!(rec.tree.height() <= rec.t_present + 1e-9);
            assert!(rec.t_present <= f64::from(rec.t_stop) + 1e-9);
            for m in &rec.measurements {
                assert!(m.n_prev >= 1);
                assert!(m.n_cum + 1 >= m.n_prev);
                assert!((0.0..=rec.t_present).contains(&m.t));
                assert!(m.targets().iter().all(|x| x.is_finite()));
            }
        }
    }

    #[test]
    fn delayed_sampling_tips_follow_activation() {
        let cfg = DatasetConfig {
            n_records: 30,
            first_seed: 77,
            model: SimModel::DelayedSampling(AltSamplingConfig::default()),
            ..Default::default()
        };
        for rec in simulate_dataset(&cfg).unwrap() {
            let activation = rec.truth.p_psi.times[0];
            assert!(activation >= 0.3 * f64::from(rec.t_stop) - 1e-9);
            let earliest_tip = rec.t_present - rec.tree.height()
                + rec
                    .tree
                    .flatten()
                    .nodes
                    .iter()
                    .filter(|n| n.children.is_none())
                    .map(|n| n.depth)
                    .fold(f64::INFINITY, f64::min);
            assert!(earliest_tip >= activation - 1e-6, "{earliest_tip} < {activation}");
        }
    }
}
