//! Accuracy and calibration of quantile predictions on held-out records.
//!
//! Point estimates are medians. The 50% and 95% intervals are the
//! `[0.25, 0.75]` and `[0.025, 0.975]` quantile pairs. Bias is
//! `mean(pred - truth)`, so positive values mean overestimation.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::error::{Error, Result};
use crate::model::{NbeModel, CHANNEL_ORDER};
use crate::sim::SimRecord;

/// Quantile levels queried for every evaluation point.
pub const EVAL_TAUS: [f64; 5] = [0.025, 0.25, 0.5, 0.75, 0.975];
const TAU_LABELS: [&str; 5] = ["q025", "q25", "q50", "q75", "q975"];

fn same_len(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected: a, got: b })
    }
}

/// Coefficient of determination, `1 - SS_res / SS_tot`.
pub fn r_squared(truth: &[f64], pred: &[f64]) -> Result<f64> {
    same_len(truth.len(), pred.len())?;
    if truth.len() < 2 {
        return Err(Error::InvalidArgument("R^2 needs at least two points".into()));
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::DegenerateTruth);
    }
    let ss_res: f64 = truth.iter().zip(pred).map(|(y, p)| (y - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// `mean(pred - truth)`.
pub fn bias(truth: &[f64], pred: &[f64]) -> Result<f64> {
    same_len(truth.len(), pred.len())?;
    if truth.is_empty() {
        return Err(Error::InvalidArgument("bias of an empty set".into()));
    }
    Ok(truth.iter().zip(pred).map(|(y, p)| p - y).sum::<f64>() / truth.len() as f64)
}

/// Interval hits, with crossed intervals (`lower > upper`) swapped before
/// counting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CoverageCount {
    pub covered: usize,
    pub crossed: usize,
    pub total: usize,
}

impl CoverageCount {
    pub fn fraction(&self) -> f64 {
        self.covered as f64 / self.total as f64
    }
}

pub fn coverage_count(truth: &[f64], lower: &[f64], upper: &[f64]) -> Result<CoverageCount> {
    same_len(truth.len(), lower.len())?;
    same_len(truth.len(), upper.len())?;
    let mut count = CoverageCount {
        total: truth.len(),
        ..Default::default()
    };
    for ((&y, &lo), &hi) in truth.iter().zip(lower).zip(upper) {
        let (lo, hi) = if lo > hi {
            count.crossed += 1;
            (hi, lo)
        } else {
            (lo, hi)
        };
        if lo <= y && y <= hi {
            count.covered += 1;
        }
    }
    Ok(count)
}

/// Fraction of `truth` inside `[lower, upper]`.
pub fn coverage(truth: &[f64], lower: &[f64], upper: &[f64]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::InvalidArgument("coverage of an empty set".into()));
    }
    Ok(coverage_count(truth, lower, upper)?.fraction())
}

/// Central `1 - alpha` range of the observed coverage fraction of `n`
/// independent intervals with nominal coverage `level`, from exact
/// binomial quantiles.
pub fn binomial_band(n: u64, level: f64, alpha: f64) -> Result<(f64, f64)> {
    if n == 0 || !(0.0..=1.0).contains(&level) || !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "band needs n > 0, level in [0, 1] and alpha in (0, 1); got {n}, {level}, {alpha}"
        )));
    }
    let dist = Binomial::new(level, n).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let lo = dist.inverse_cdf(alpha / 2.0);
    let hi = dist.inverse_cdf(1.0 - alpha / 2.0);
    Ok((lo as f64 / n as f64, hi as f64 / n as f64))
}

/// Every `n` in `range` whose 50% and 95% bands, rounded to three decimals,
/// equal `band50` and `band95`.
pub fn recover_n(
    band50: (f64, f64),
    band95: (f64, f64),
    alpha: f64,
    range: std::ops::RangeInclusive<u64>,
) -> Result<Vec<u64>> {
    let r3 = |x: f64| (x * 1000.0).round() / 1000.0;
    let matches = |n: u64, level: f64, band: (f64, f64)| -> Result<bool> {
        let (lo, hi) = binomial_band(n, level, alpha)?;
        Ok(r3(lo) == r3(band.0) && r3(hi) == r3(band.1))
    };
    let mut out = Vec::new();
    for n in range {
        if matches(n, 0.5, band50)? && matches(n, 0.95, band95)? {
            out.push(n);
        }
    }
    Ok(out)
}

/// All quantiles at one (record, measurement) point. `q[k][c]` is the
/// `EVAL_TAUS[k]` quantile of channel `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPoint {
    pub record_id: u64,
    pub t: f64,
    pub truth: [f64; 3],
    pub q: [[f64; 3]; 5],
}

impl EvalPoint {
    /// Whether some channel's quantiles decrease somewhere along `EVAL_TAUS`.
    pub fn has_crossing(&self) -> bool {
        (0..3).any(|c| self.q.windows(2).any(|w| w[0][c] > w[1][c]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantityReport {
    pub r2: f64,
    pub bias: f64,
    pub cover50: f64,
    pub cover95: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bands {
    #[serde(rename = "50")]
    pub b50: (f64, f64),
    #[serde(rename = "95")]
    pub b95: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub reff: QuantityReport,
    pub log10_prev: QuantityReport,
    pub log10_cum: QuantityReport,
    pub n_points: usize,
    pub crossing_rate: f64,
    /// Acceptance bands for the coverage columns at significance 0.05.
    pub bands: Bands,
}

impl EvalReport {
    pub fn quantities(&self) -> [(&'static str, &QuantityReport); 3] {
        [
            (CHANNEL_ORDER[0], &self.reff),
            (CHANNEL_ORDER[1], &self.log10_prev),
            (CHANNEL_ORDER[2], &self.log10_cum),
        ]
    }

    /// Quantities whose 95% coverage falls below its band.
    pub fn under_covered(&self) -> Vec<&'static str> {
        self.quantities()
            .into_iter()
            .filter(|(_, q)| q.cover95 < self.bands.b95.0)
            .map(|(name, _)| name)
            .collect()
    }
}

/// Summaries over a set of evaluation points.
pub fn summarize(points: &[EvalPoint]) -> Result<EvalReport> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("no evaluation points".into()));
    }
    let column = |k: Option<usize>, c: usize| -> Vec<f64> {
        points
            .iter()
            .map(|p| match k {
                None => p.truth[c],
                Some(k) => p.q[k][c],
            })
            .collect()
    };
    let quantity = |c: usize| -> Result<QuantityReport> {
        let truth = column(None, c);
        let median = column(Some(2), c);
        Ok(QuantityReport {
            r2: r_squared(&truth, &median)?,
            bias: bias(&truth, &median)?,
            cover50: coverage(&truth, &column(Some(1), c), &column(Some(3), c))?,
            cover95: coverage(&truth, &column(Some(0), c), &column(Some(4), c))?,
        })
    };
    let n = points.len();
    let crossed = points.iter().filter(|p| p.has_crossing()).count();
    Ok(EvalReport {
        reff: quantity(0)?,
        log10_prev: quantity(1)?,
        log10_cum: quantity(2)?,
        n_points: n,
        crossing_rate: crossed as f64 / n as f64,
        bands: Bands {
            b50: binomial_band(n as u64, 0.5, 0.05)?,
            b95: binomial_band(n as u64, 0.95, 0.05)?,
        },
    })
}

/// Query `model` at every measurement of every record.
pub fn model_points(model: &NbeModel, records: &[SimRecord]) -> Result<Vec<EvalPoint>> {
    let per_record: Vec<Vec<EvalPoint>> = records
        .par_iter()
        .map(|rec| {
            let emb = model.btu_embed(&rec.tree)?;
            let h = rec.tree.height();
            rec.measurements
                .iter()
                .map(|m| {
                    let s = (rec.t_present - m.t).max(0.0);
                    let mut q = [[0.0; 3]; 5];
                    for (k, &tau) in EVAL_TAUS.iter().enumerate() {
                        q[k] = model.predict_from_embedding(&emb, h, 1.0 / rec.sigma, s, tau)?.values();
                    }
                    Ok(EvalPoint {
                        record_id: rec.seed,
                        t: m.t,
                        truth: m.targets(),
                        q,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_record.into_iter().flatten().collect())
}

/// Points from a predictor that knows the truth: every quantile below the
/// median is `truth - delta`, every one above is `truth + delta`.
pub fn oracle_points(records: &[SimRecord], delta: f64) -> Vec<EvalPoint> {
    records
        .iter()
        .flat_map(|rec| {
            rec.measurements.iter().map(move |m| {
                let y = m.targets();
                let shift = [-delta, -delta, 0.0, delta, delta];
                EvalPoint {
                    record_id: rec.seed,
                    t: m.t,
                    truth: y,
                    q: shift.map(|d| y.map(|v| v + d)),
                }
            })
        })
        .collect()
}

pub fn evaluate_model(model: &NbeModel, records: &[SimRecord]) -> Result<(EvalReport, Vec<EvalPoint>)> {
    let points = model_points(model, records)?;
    Ok((summarize(&points)?, points))
}

/// One row per point: `record_id, t`, then for each quantity its truth and
/// the five quantiles.
pub fn write_points_csv<W: Write>(mut out: W, points: &[EvalPoint]) -> Result<()> {
    let mut header = vec!["record_id".to_string(), "t".to_string()];
    for name in CHANNEL_ORDER {
        header.push(format!("truth_{name}"));
        header.extend(TAU_LABELS.iter().map(|l| format!("{l}_{name}")));
    }
    writeln!(out, "{}", header.join(","))?;
    for p in points {
        let mut row = vec![p.record_id.to_string(), p.t.to_string()];
        for c in 0..3 {
            row.push(p.truth[c].to_string());
            row.extend(p.q.iter().map(|qk| qk[c].to_string()));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
