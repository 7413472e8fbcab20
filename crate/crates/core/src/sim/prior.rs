use rand::Rng;
use rand_distr::{Beta, Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::piecewise::PiecewiseConstant;
use crate::error::{Error, Result};

/// Parameters of every prior distribution used by the simulator. The
/// defaults are the standard prior; any field can be overridden to study
/// alternative priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    /// Epidemic duration, discrete uniform on `t_stop_min..=t_stop_max` days.
    pub t_stop_min: u32,
    pub t_stop_max: u32,
    /// Net becoming-uninfectious rate, lognormal (natural-log parameters).
    pub sigma_log_mean: f64,
    pub sigma_log_sd: f64,
    /// Number of change points per piecewise function, discrete uniform.
    pub change_points_min: usize,
    pub change_points_max: usize,
    /// Reproduction number values, lognormal.
    pub reff_log_mean: f64,
    pub reff_log_sd: f64,
    /// Sampled proportion values, Beta.
    pub p_psi_alpha: f64,
    pub p_psi_beta: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            t_stop_min: 30,
            t_stop_max: 90,
            sigma_log_mean: -1.81,
            sigma_log_sd: 0.2,
            change_points_min: 1,
            change_points_max: 2,
            reff_log_mean: 1.0,
            reff_log_sd: 0.7,
            p_psi_alpha: 1.1,
            p_psi_beta: 8.0,
        }
    }
}

/// Delayed-sampling variant: no sampling before `t_act * t_stop`, where
/// `t_act ~ Uniform(activation_low, activation_high)`; afterwards a single
/// sampled proportion drawn from the usual Beta prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AltSamplingConfig {
    pub activation_low: f64,
    pub activation_high: f64,
}

impl Default for AltSamplingConfig {
    fn default() -> Self {
        AltSamplingConfig {
            activation_low: 0.3,
            activation_high: 0.7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SimModel {
    #[default]
    Standard,
    DelayedSampling(AltSamplingConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpidemicParams {
    pub reff: PiecewiseConstant,
    pub p_psi: PiecewiseConstant,
    /// Net becoming-uninfectious rate, per day.
    pub sigma: f64,
    /// Epidemic duration in days.
    pub t_stop: u32,
}

impl EpidemicParams {
    pub fn validate(&self) -> Result<()> {
        if self.reff.values.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidArgument("reproduction numbers must be positive".into()));
        }
        if self.p_psi.values.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument("sampled proportions must lie in [0, 1]".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument("sigma must be positive".into()));
        }
        Ok(())
    }
}

/// Birth (`lambda`), death (`mu`) and sampling (`psi`) rates per day.
#[derive(Debug, Clone, PartialEq)]
pub struct Rates {
    pub lambda: PiecewiseConstant,
    pub mu: PiecewiseConstant,
    pub psi: PiecewiseConstant,
}

impl Rates {
    pub fn constant(lambda: f64, mu: f64, psi: f64) -> Self {
        Rates {
            lambda: PiecewiseConstant::constant(lambda),
            mu: PiecewiseConstant::constant(mu),
            psi: PiecewiseConstant::constant(psi),
        }
    }

    /// `(lambda, mu, psi)` at time `t`.
    pub fn at(&self, t: f64) -> (f64, f64, f64) {
        (self.lambda.eval(t), self.mu.eval(t), self.psi.eval(t))
    }

    /// Earliest change of any rate strictly after `t`.
    pub fn next_change(&self, t: f64) -> Option<f64> {
        [&self.lambda, &self.mu, &self.psi]
            .iter()
            .filter_map(|f| f.next_change(t))
            .min_by(f64::total_cmp)
    }
}

/// `lambda = R sigma`, `psi = p sigma`, `mu = (1 - p) sigma`, so that
/// `mu + psi = sigma`, `lambda / sigma = R` and `psi / sigma = p`.
pub fn rates_from_params(params: &EpidemicParams) -> Rates {
    let sigma = params.sigma;
    Rates {
        lambda: params.reff.map(|r| r * sigma),
        mu: params.p_psi.map(|p| (1.0 - p) * sigma),
        psi: params.p_psi.map(|p| p * sigma),
    }
}

fn sorted_change_times<R: Rng + ?Sized>(count: usize, t_stop: f64, rng: &mut R) -> Vec<f64> {
    let mut times: Vec<f64> = Vec::with_capacity(count);
    while times.len() < count {
        let c = rng.random::<f64>() * t_stop;
        // Change times must be strictly inside (0, t_stop) and distinct.
        if c > 0.0 && c < t_stop && !times.contains(&c) {
            times.push(c);
        }
    }
    times.sort_by(f64::total_cmp);
    times
}

fn piecewise_from_prior<R: Rng + ?Sized>(
    prior: &PriorConfig,
    t_stop: f64,
    dist: &impl Distribution<f64>,
    rng: &mut R,
) -> PiecewiseConstant {
    let k = rng.random_range(prior.change_points_min..=prior.change_points_max);
    let times = sorted_change_times(k, t_stop, rng);
    let values = (0..=k).map(|_| dist.sample(rng)).collect();
    PiecewiseConstant { times, values }
}

/// Draw one parameter set from the prior.
///
/// The reproduction number and the sampled proportion each get their own
/// number of change points and their own change times.
pub fn sample_prior<R: Rng + ?Sized>(
    prior: &PriorConfig,
    model: &SimModel,
    rng: &mut R,
) -> EpidemicParams {
    let t_stop = rng.random_range(prior.t_stop_min..=prior.t_stop_max);
    let sigma = LogNormal::new(prior.sigma_log_mean, prior.sigma_log_sd)
        .expect("valid sigma prior")
        .sample(rng);
    let reff_dist = LogNormal::new(prior.reff_log_mean, prior.reff_log_sd).expect("valid reff prior");
    let p_dist = Beta::new(prior.p_psi_alpha, prior.p_psi_beta).expect("valid p_psi prior");
    let horizon = f64::from(t_stop);
    let reff = piecewise_from_prior(prior, horizon, &reff_dist, rng);
    let p_psi = match model {
        SimModel::Standard => piecewise_from_prior(prior, horizon, &p_dist, rng),
        SimModel::DelayedSampling(alt) => {
            let frac = alt.activation_low + rng.random::<f64>() * (alt.activation_high - alt.activation_low);
            let p = p_dist.sample(rng);
            PiecewiseConstant {
                times: vec![frac * horizon],
                values: vec![0.0, p],
            }
        }
    };
    EpidemicParams {
        reff,
        p_psi,
        sigma,
        t_stop,
    }
}

/// Median and central 95% range of a set of draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Spread {
    /// Empirical quantiles (nearest rank) of `values`.
    pub fn of(values: &mut [f64]) -> Spread {
        values.sort_by(f64::total_cmp);
        let q = |p: f64| values[((p * values.len() as f64).ceil() as usize).clamp(1, values.len()) - 1];
        Spread {
            median: q(0.5),
            lower: q(0.025),
            upper: q(0.975),
        }
    }
}

/// Marginal spread of the reproduction number (one value per draw, the
/// first piece) and of `sigma` over `draws` prior draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSummary {
    pub draws: usize,
    pub reff: Spread,
    pub sigma: Spread,
    pub p_psi: Spread,
    pub t_stop: Spread,
}

pub fn summarize_prior<R: Rng + ?Sized>(prior: &PriorConfig, model: &SimModel, draws: usize, rng: &mut R) -> PriorSummary {
    let mut reff = Vec::with_capacity(draws);
    let mut sigma = Vec::with_capacity(draws);
    let mut p_psi = Vec::with_capacity(draws);
    let mut t_stop = Vec::with_capacity(draws);
    for _ in 0..draws {
        let p = sample_prior(prior, model, rng);
        reff.push(p.reff.values[0]);
        sigma.push(p.sigma);
        p_psi.push(*p.p_psi.values.last().expect("at least one piece"));
        t_stop.push(f64::from(p.t_stop));
    }
    PriorSummary {
        draws,
        reff: Spread::of(&mut reff),
        sigma: Spread::of(&mut sigma),
        p_psi: Spread::of(&mut p_psi),
        t_stop: Spread::of(&mut t_stop),
    }
}
