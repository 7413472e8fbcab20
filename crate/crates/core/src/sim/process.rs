//! Exact event simulation of the birth-death-sampling process.
//!
//! Within an interval where all rates are constant the time to the next
//! event is exponential with rate `n (lambda + mu + psi)` for `n` infectious
//! lineages. A draw that would cross the next rate change is discarded and
//! the clock restarts at the change point, which is exact because the
//! exponential is memoryless.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use super::prior::{rates_from_params, EpidemicParams, Rates};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Birth,
    Death,
    Sampling,
    /// Still infectious when the simulation stopped (or still running).
    Extant,
}

/// One lineage segment. It starts at its parent's event time (or at 0 for
/// the root) and ends at `time` with `kind`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TtNode {
    pub time: f64,
    pub kind: EventKind,
    pub parent: Option<usize>,
    /// Set for births: the infector's continuation, then the new infectee.
    pub children: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    TimeLimit,
    PrevalenceCap,
    SampleCap,
}

/// Complete who-infected-whom history, including unsampled infections.
///
/// Segments are only ever appended, so a child's index is always larger
/// than its parent's.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionTree {
    nodes: Vec<TtNode>,
    stop_time: f64,
    stop_reason: Option<StopReason>,
    births: usize,
    deaths: usize,
    samples: usize,
}

impl Default for TransmissionTree {
    fn default() -> Self {
        Self::new()
    }
}

impl TransmissionTree {
    /// A history with a single infectious index case (segment 0) at time 0.
    pub fn new() -> Self {
        TransmissionTree {
            nodes: vec![TtNode {
                time: f64::NAN,
                kind: EventKind::Extant,
                parent: None,
                children: None,
            }],
            stop_time: f64::NAN,
            stop_reason: None,
            births: 0,
            deaths: 0,
            samples: 0,
        }
    }

    pub const ROOT: usize = 0;

    fn end_segment(&mut self, lineage: usize, t: f64, kind: EventKind) {
        let node = &mut self.nodes[lineage];
        debug_assert!(node.kind == EventKind::Extant && node.time.is_nan(), "lineage already ended");
        node.time = t;
        node.kind = kind;
    }

    fn push_segment(&mut self, parent: usize) -> usize {
        self.nodes.push(TtNode {
            time: f64::NAN,
            kind: EventKind::Extant,
            parent: Some(parent),
            children: None,
        });
        self.nodes.len() - 1
    }

    /// Lineage `lineage` infects someone at `t`. Returns the segments of the
    /// continuing infector and of the new infectee.
    pub fn birth(&mut self, lineage: usize, t: f64) -> (usize, usize) {
        self.end_segment(lineage, t, EventKind::Birth);
        let infector = self.push_segment(lineage);
        let infectee = self.push_segment(lineage);
        self.nodes[lineage].children = Some((infector, infectee));
        self.births += 1;
        (infector, infectee)
    }

    pub fn death(&mut self, lineage: usize, t: f64) {
        self.end_segment(lineage, t, EventKind::Death);
        self.deaths += 1;
    }

    pub fn sample(&mut self, lineage: usize, t: f64) {
        self.end_segment(lineage, t, EventKind::Sampling);
        self.samples += 1;
    }

    /// Close every still-open segment at `t`.
    pub fn finish(&mut self, t: f64, reason: StopReason) {
        for node in &mut self.nodes {
            if node.kind == EventKind::Extant && node.time.is_nan() {
                node.time = t;
            }
        }
        self.stop_time = t;
        self.stop_reason = Some(reason);
    }

    pub fn nodes(&self) -> &[TtNode] {
        &self.nodes
    }

    pub fn stop_time(&self) -> f64 {
        self.stop_time
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.stop_reason
    }

    pub fn birth_count(&self) -> usize {
        self.births
    }

    pub fn death_count(&self) -> usize {
        self.deaths
    }

    pub fn sample_count(&self) -> usize {
        self.samples
    }

    /// Start time of segment `i`.
    pub fn start_time(&self, i: usize) -> f64 {
        self.nodes[i].parent.map_or(0.0, |p| self.nodes[p].time)
    }

    /// Number of infectious lineages at `t`, counted directly from the
    /// segments. A lineage that ends by death or sampling at `t` is no
    /// longer counted; extant segments are counted up to and including the
    /// stop time.
    pub fn prevalence_at(&self, t: f64) -> usize {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(i, n)| {
                let start = self.start_time(*i);
                match n.kind {
                    EventKind::Extant => start <= t && t <= n.time,
                    _ => start <= t && t < n.time,
                }
            })
            .count()
    }

    /// Infections up to and including `t`, counting the index case.
    pub fn cumulative_at(&self, t: f64) -> usize {
        1 + self.count_events(EventKind::Birth, t)
    }

    /// Number of events of `kind` at times `<= t`.
    pub fn count_events(&self, kind: EventKind, t: f64) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.kind == kind && n.time <= t)
            .count()
    }

    /// Lineages still infectious when the process stopped.
    pub fn final_prevalence(&self) -> usize {
        self.nodes.iter().filter(|n| n.kind == EventKind::Extant).count()
    }

    /// Indices of the sampling segments.
    pub fn sampling_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].kind == EventKind::Sampling)
            .collect()
    }

    /// Path length through the transmission history between the ends of
    /// segments `a` and `b`.
    pub fn path_distance(&self, a: usize, b: usize) -> f64 {
        let ancestors = |mut i: usize| {
            let mut out = vec![i];
            while let Some(p) = self.nodes[i].parent {
                out.push(p);
                i = p;
            }
            out
        };
        let pa = ancestors(a);
        let pb = ancestors(b);
        // Walk down from the root while the two ancestries agree.
        let common = pa
            .iter()
            .rev()
            .zip(pb.iter().rev())
            .take_while(|(x, y)| x == y)
            .last()
            .map(|(x, _)| *x)
            .expect("segments share the root");
        // The ancestries diverge where the common segment ends.
        let t_lca = self.nodes[common].time;
        (self.nodes[a].time - t_lca) + (self.nodes[b].time - t_lca)
    }
}

/// Hard caps that end a simulation early.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimLimits {
    pub max_prevalence: usize,
    pub max_samples: usize,
}

impl Default for SimLimits {
    fn default() -> Self {
        SimLimits {
            max_prevalence: 50_000,
            max_samples: 1_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    /// No infectious lineage left when (or before) the process stopped.
    Extinct,
    /// Fewer than two sequenced infections.
    TooFewSamples(usize),
}

/// A simulation that fails the conditioning. Carries the history so that
/// callers can still inspect it.
#[derive(Debug, Clone)]
pub struct Rejected {
    pub reason: RejectReason,
    pub tree: TransmissionTree,
}

/// Simulate from one infectious lineage at time 0 until `t_stop`, the
/// prevalence cap or the sample cap, whichever comes first.
pub fn simulate_raw<R: Rng + ?Sized>(
    rates: &Rates,
    t_stop: f64,
    limits: &SimLimits,
    rng: &mut R,
) -> std::result::Result<TransmissionTree, Rejected> {
    let mut tree = TransmissionTree::new();
    let mut active = vec![TransmissionTree::ROOT];
    let mut t = 0.0;
    let reason = loop {
        if active.is_empty() {
            tree.finish(t, StopReason::TimeLimit);
            return Err(Rejected {
                reason: RejectReason::Extinct,
                tree,
            });
        }
        let boundary = rates.next_change(t).map_or(t_stop, |c| c.min(t_stop));
        let (lambda, mu, psi) = rates.at(t);
        let per_lineage = lambda + mu + psi;
        let dt = if per_lineage > 0.0 {
            let draw: f64 = Exp1.sample(rng);
            draw / (active.len() as f64 * per_lineage)
        } else {
            f64::INFINITY
        };
        if t + dt >= boundary {
            t = boundary;
            if t >= t_stop {
                break StopReason::TimeLimit;
            }
            continue;
        }
        t += dt;
        let slot = rng.random_range(0..active.len());
        let u = rng.random::<f64>() * per_lineage;
        if u < lambda {
            let (infector, infectee) = tree.birth(active[slot], t);
            active[slot] = infector;
            active.push(infectee);
            if active.len() >= limits.max_prevalence {
                break StopReason::PrevalenceCap;
            }
        } else if u < lambda + mu {
            tree.death(active.swap_remove(slot), t);
        } else {
            tree.sample(active.swap_remove(slot), t);
            if tree.sample_count() >= limits.max_samples {
                break StopReason::SampleCap;
            }
        }
    };
    tree.finish(t, reason);
    if active.is_empty() {
        return Err(Rejected {
            reason: RejectReason::Extinct,
            tree,
        });
    }
    if tree.sample_count() < 2 {
        return Err(Rejected {
            reason: RejectReason::TooFewSamples(tree.sample_count()),
            tree,
        });
    }
    Ok(tree)
}

#[derive(Debug, Clone)]
pub struct Accepted {
    pub params: EpidemicParams,
    pub tree: TransmissionTree,
    /// Simulations rejected before this one was accepted.
    pub rejections: usize,
}

/// Draw parameters and a trajectory until the trajectory survives with at
/// least two samples. Each retry redraws the parameters too.
pub fn condition_and_resample<R, F>(
    mut sample_params: F,
    limits: &SimLimits,
    max_rejections: usize,
    rng: &mut R,
) -> Result<Accepted>
where
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> EpidemicParams,
{
    let mut rejections = 0;
    loop {
        let params = sample_params(rng);
        let rates = rates_from_params(&params);
        match simulate_raw(&rates, f64::from(params.t_stop), limits, rng) {
            Ok(tree) => {
                return Ok(Accepted {
                    params,
                    tree,
                    rejections,
                })
            }
            Err(_) => {
                rejections += 1;
                if rejections >= max_rejections {
                    return Err(Error::TooManyRejections(rejections));
                }
            }
        }
    }
}
