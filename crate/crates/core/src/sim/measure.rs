use rand::Rng;
use serde::{Deserialize, Serialize};

use super::prior::EpidemicParams;
use super::process::TransmissionTree;

/// True epidemic state at one time point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    /// Days since the index case.
    pub t: f64,
    /// Infectious lineages at `t`.
    pub n_prev: u64,
    /// Infections up to `t`, index case included.
    pub n_cum: u64,
    /// Reproduction number at `t`.
    pub reff: f64,
}

impl Measurement {
    /// Regression targets in channel order: reproduction number,
    /// log10 prevalence, log10 cumulative incidence.
    pub fn targets(&self) -> [f64; 3] {
        [self.reff, (self.n_prev as f64).log10(), (self.n_cum as f64).log10()]
    }

    pub fn at(tt: &TransmissionTree, params: &EpidemicParams, t: f64) -> Self {
        Measurement {
            t,
            n_prev: tt.prevalence_at(t) as u64,
            n_cum: tt.cumulative_at(t) as u64,
            reff: params.reff.eval(t),
        }
    }
}

/// `count` measurements at independent times `t ~ Uniform(0, t_present)`.
pub fn measure<R: Rng + ?Sized>(
    tt: &TransmissionTree,
    params: &EpidemicParams,
    t_present: f64,
    count: usize,
    rng: &mut R,
) -> Vec<Measurement> {
    (0..count)
        .map(|_| Measurement::at(tt, params, rng.random::<f64>() * t_present))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::piecewise::PiecewiseConstant;
    use crate::sim::process::{EventKind, StopReason};

    fn params() -> EpidemicParams {
        EpidemicParams {
            reff: PiecewiseConstant::new(vec![2.0], vec![1.5, 0.5]).unwrap(),
            p_psi: PiecewiseConstant::constant(0.5),
            sigma: 0.1,
            t_stop: 10,
        }
    }

    #[test]
    fn index_case_only_at_start() {
        let mut tt = TransmissionTree::new();
        let (a, b) = tt.birth(TransmissionTree::ROOT, 1.0);
        tt.sample(a, 3.0);
        tt.sample(b, 4.0);
        tt.finish(4.0, StopReason::SampleCap);
        let m = Measurement::at(&tt, &params(), 1e-6);
        assert_eq!((m.n_prev, m.n_cum), (1, 1));
        assert_eq!(m.reff, 1.5);
        let m = Measurement::at(&tt, &params(), 3.5);
        assert_eq!((m.n_prev, m.n_cum), (1, 2));
        assert_eq!(m.reff, 0.5);
        assert_eq!(m.targets()[1], 0.0);
        assert!((m.targets()[2] - 2f64.log10()).abs() < 1e-15);
    }

    #[test]
    fn counting_identity_on_hand_history() {
        let mut tt = TransmissionTree::new();
        let (a, b) = tt.birth(TransmissionTree::ROOT, 1.0);
        let (c, d) = tt.birth(a, 2.0);
        tt.death(b, 2.5);
        tt.sample(c, 3.0);
        tt.finish(5.0, StopReason::TimeLimit);
        let _ = d;
        for i in 0..=50 {
            let t = i as f64 * 0.1;
            let identity = 1 + tt.count_events(EventKind::Birth, t)
                - tt.count_events(EventKind::Death, t)
                - tt.count_events(EventKind::Sampling, t);
            assert_eq!(tt.prevalence_at(t), identity, "t = {t}");
        }
    }
}
