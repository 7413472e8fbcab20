#![allow(dead_code)]

use phylo_nbe::model::{BtuConfig, NbeModel, PredConfig};
use phylo_nbe::sim::{EpidemicParams, Measurement, PiecewiseConstant, SimRecord};
use phylo_nbe::tree::ReconTree;
use rand::Rng;

/// Random binary tree with `tips` leaves and branch lengths in (0.05, 2).
pub fn random_tree(tips: usize, rng: &mut impl Rng) -> ReconTree {
    let mut pool: Vec<ReconTree> = (0..tips).map(|_| ReconTree::leaf(rng.random_range(0.05..2.0))).collect();
    while pool.len() > 1 {
        let a = pool.swap_remove(rng.random_range(0..pool.len()));
        let b = pool.swap_remove(rng.random_range(0..pool.len()));
        pool.push(ReconTree::internal(rng.random_range(0.05..2.0), a, b));
    }
    let mut root = pool.pop().unwrap();
    root.set_branch_length(0.0);
    root
}

/// A record around `tree` with `j` random measurements.
pub fn toy_record(seed: u64, tree: ReconTree, j: usize, rng: &mut impl Rng) -> SimRecord {
    let t_present = tree.height() + rng.random_range(0.5..5.0);
    let measurements = (0..j)
        .map(|_| {
            let n_prev = rng.random_range(1..200u64);
            Measurement {
                t: rng.random_range(0.0..t_present),
                n_prev,
                n_cum: n_prev + rng.random_range(0..500u64),
                reff: rng.random_range(0.3..6.0),
            }
        })
        .collect();
    SimRecord {
        seed,
        sigma: rng.random_range(0.1..0.3),
        t_present,
        t_stop: t_present.ceil() as u32,
        tree,
        measurements,
        truth: EpidemicParams {
            reff: PiecewiseConstant::constant(1.5),
            p_psi: PiecewiseConstant::constant(0.1),
            sigma: 0.2,
            t_stop: t_present.ceil() as u32,
        },
    }
}

pub fn small_model(n: usize, rng: &mut impl Rng) -> NbeModel {
    NbeModel::new(
        BtuConfig {
            embedding_dim: n,
            hidden_depth: 2,
            hidden_width: 8,
        },
        PredConfig {
            hidden_depth: 2,
            hidden_width: 8,
        },
        rng,
    )
    .unwrap()
}
