mod common;

use common::{random_tree, small_model, toy_record};
use phylo_nbe::model::{
    fine_tune, train, validation_loss, BtuConfig, NbeModel, PredConfig, TrainConfig, TrainMode, VALIDATION_TAUS,
};
use phylo_nbe::nn::{elu, pinball_loss, softplus, softplus_inverse, DenseNet, Matrix};
use phylo_nbe::sim::SimRecord;
use phylo_nbe::tree::ReconTree;
use phylo_nbe::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn single_leaf_embeds_to_zero() {
    let model = small_model(5, &mut rng(1));
    assert_eq!(model.btu_embed(&ReconTree::leaf(0.0)).unwrap(), vec![0.0; 5]);
}

#[test]
fn zero_height_tree_is_degenerate() {
    let model = small_model(5, &mut rng(1));
    let flat = ReconTree::internal(0.0, ReconTree::leaf(0.0), ReconTree::leaf(0.0));
    assert!(matches!(model.btu_embed(&flat), Err(Error::DegenerateTree)));
    assert!(matches!(model.predict(&flat, 5.0, 1.0, 0.5), Err(Error::DegenerateTree)));
}

#[test]
fn embedding_is_scale_invariant() {
    let mut r = rng(2);
    let model = NbeModel::new(BtuConfig::default(), PredConfig::default(), &mut r).unwrap();
    for _ in 0..20 {
        let tips = r.random_range(2..40);
        let tree = random_tree(tips, &mut r);
        let base = model.btu_embed(&tree).unwrap();
        for c in [0.1, 3.0, 1000.0] {
            let scaled = model.btu_embed(&tree.scaled(c)).unwrap();
            for (a, b) in base.iter().zip(&scaled) {
                assert!((a - b).abs() <= 1e-12, "c={c}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn embedding_matches_hand_recursion() {
    // n = 2 and g a single affine layer that sums the node's own features
    // and both children: g(x) = [x0 + x2 + x4, x1 + x3 + x5] + [0.1, -0.2].
    let mut model = small_model(2, &mut rng(3));
    let mut g = DenseNet::zeros(&[6, 2]);
    g.layers[0].weights = Matrix::from_rows(&[
        vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0],
        vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0],
    ]);
    g.layers[0].bias = vec![0.1, -0.2];
    model.btu = g;
    model.btu_config.hidden_depth = 0;

    // ((A:1,B:2):1,C:3); height 3.
    let tree: ReconTree = "((A:1,B:2):1,C:3);".parse().unwrap();
    let h = 3.0;
    let a = [2.0 / h, 1.0 / h];
    let b = [3.0 / h, 2.0 / h];
    let c = [3.0 / h, 3.0 / h];
    let inner = [1.0 / h + a[0] + b[0] + 0.1, 1.0 / h + a[1] + b[1] - 0.2];
    let root = [0.0 + inner[0] + c[0] + 0.1, 0.0 + inner[1] + c[1] - 0.2];
    let got = model.btu_embed(&tree).unwrap();
    assert!((got[0] - root[0]).abs() < 1e-14 && (got[1] - root[1]).abs() < 1e-14, "{got:?} vs {root:?}");
    assert!((root[0] - 3.2).abs() < 1e-12);
}

#[test]
fn leaf_features_are_padded_then_activated() {
    // n = 3; the embedding network reads only the left child's third slot
    // and the left child's first slot.
    let mut model = small_model(3, &mut rng(4));
    let mut g = DenseNet::zeros(&[8, 3]);
    g.layers[0].weights.data[2] = 1.0; // out0 <- left[0]
    g.layers[0].weights.data[8 + 4] = 1.0; // out1 <- left[2] (padding)
    model.btu = g;
    model.btu_config.hidden_depth = 0;
    let tree: ReconTree = "(A:1,B:4);".parse().unwrap();
    let got = model.btu_embed(&tree).unwrap();
    assert_eq!(got, vec![elu(0.25), 0.0, 0.0]);
}

#[test]
fn reff_quantiles_are_positive() {
    let mut r = rng(5);
    let model = small_model(6, &mut r);
    let mut pred_model = model.clone();
    // Push the reff output strongly negative.
    pred_model.pred.layers.last_mut().unwrap().bias[0] = -800.0;
    for _ in 0..1000 {
        let tree = random_tree(r.random_range(2..12), &mut r);
        let t = r.random_range(0.0..50.0);
        let tau = r.random::<f64>();
        for m in [&model, &pred_model] {
            let q = m.predict(&tree, r.random_range(0.1..30.0), t, tau).unwrap();
            assert!(q.q_reff > 0.0);
        }
    }
}

#[test]
fn zero_output_weights_collapse_to_bias() {
    let mut r = rng(6);
    let mut model = small_model(4, &mut r);
    let last = model.pred.layers.last_mut().unwrap();
    last.weights.data.iter_mut().for_each(|w| *w = 0.0);
    last.bias = vec![0.3, -1.2, 2.5];
    for _ in 0..20 {
        let tree = random_tree(r.random_range(2..10), &mut r);
        let q = model.predict(&tree, 4.0, r.random_range(0.0..10.0), r.random()).unwrap();
        assert_eq!(q.values(), [softplus(0.3), -1.2, 2.5]);
    }
}

#[test]
fn joint_rescaling_only_acts_through_height_channel() {
    let mut r = rng(7);
    let mut model = small_model(4, &mut r);
    let n = model.embedding_dim();
    let first = &mut model.pred.layers[0].weights;
    for row in 0..first.rows {
        first.row_mut(row)[n] = 0.0;
    }
    for _ in 0..20 {
        let tree = random_tree(r.random_range(2..15), &mut r);
        let (s, t, tau) = (r.random_range(1.0..10.0), r.random_range(0.0..20.0), r.random::<f64>());
        let base = model.predict(&tree, s, t, tau).unwrap().values();
        for c in [0.1, 3.0, 1000.0] {
            let scaled = model.predict(&tree.scaled(c), c * s, c * t, tau).unwrap().values();
            for (a, b) in base.iter().zip(&scaled) {
                assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()), "{a} vs {b}");
            }
        }
    }
}

#[test]
fn trajectory_is_the_cartesian_grid() {
    let mut r = rng(8);
    let model = small_model(4, &mut r);
    let tree = random_tree(7, &mut r);
    let times = [0.0, 1.5, 4.0];
    let taus = [0.025, 0.5, 0.975];
    let grid = model.trajectory(&tree, 5.0, &times, &taus).unwrap();
    assert_eq!(grid.len(), 9);
    for (i, &t) in times.iter().enumerate() {
        for (k, &tau) in taus.iter().enumerate() {
            let est = grid[i * 3 + k];
            assert_eq!((est.t, est.tau), (t, tau));
            assert_eq!(est, model.predict(&tree, 5.0, t, tau).unwrap());
        }
    }
    assert!(model.trajectory(&tree, 5.0, &[], &taus).is_err());
    assert!(model.predict(&tree, 5.0, 1.0, 1.5).is_err());
    assert!(model.predict(&tree, 0.0, 1.0, 0.5).is_err());
    assert!(model.predict(&tree, 5.0, -1.0, 0.5).is_err());
}

/// Largest relative error between model gradients and central differences,
/// with the denominator floored at 1e-5.
fn max_gradient_error(model: &NbeModel, records: &[&SimRecord], taus: &[f64]) -> f64 {
    let (_, g_btu, g_pred) = model.batch_gradients(records, taus).unwrap();
    let h = 1e-6;
    let loss = |m: &NbeModel| m.batch_loss::<ChaCha8Rng>(records, taus, None).unwrap();
    let mut worst = 0.0f64;
    for (which, analytic) in [(0, g_btu.flat()), (1, g_pred.flat())] {
        let base = if which == 0 { model.btu.flat_params() } else { model.pred.flat_params() };
        for (i, a) in analytic.iter().enumerate() {
            let mut plus = model.clone();
            let mut minus = model.clone();
            let mut p = base.clone();
            p[i] += h;
            let mut q = base.clone();
            q[i] -= h;
            if which == 0 {
                plus.btu.set_flat_params(&p);
                minus.btu.set_flat_params(&q);
            } else {
                plus.pred.set_flat_params(&p);
                minus.pred.set_flat_params(&q);
            }
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-5));
        }
    }
    worst
}

#[test]
fn gradients_through_recursion_match_finite_differences() {
    for seed in 0..5 {
        let mut r = rng(100 + seed);
        let model = small_model(4, &mut r);
        let records: Vec<SimRecord> = (0..2).map(|i| toy_record(i, random_tree(5, &mut r), 3, &mut r)).collect();
        let refs: Vec<&SimRecord> = records.iter().collect();
        let err = max_gradient_error(&model, &refs, &[0.2, 0.7]);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn batch_loss_is_mean_of_record_losses() {
    let mut r = rng(9);
    let model = small_model(4, &mut r);
    let records: Vec<SimRecord> = (0..6).map(|i| toy_record(i, random_tree(r.random_range(2..20), &mut r), 4, &mut r)).collect();
    let refs: Vec<&SimRecord> = records.iter().collect();
    let taus: Vec<f64> = (0..6).map(|_| r.random()).collect();
    let joint = model.batch_loss::<ChaCha8Rng>(&refs, &taus, None).unwrap();
    let separate: f64 = refs
        .iter()
        .zip(&taus)
        .map(|(rec, &tau)| model.batch_loss::<ChaCha8Rng>(&[*rec], &[tau], None).unwrap())
        .sum::<f64>()
        / 6.0;
    assert!((joint - separate).abs() <= 1e-12, "{joint} vs {separate}");

    let mut rev = refs.clone();
    rev.reverse();
    let rev_taus: Vec<f64> = taus.iter().rev().copied().collect();
    let reordered = model.batch_loss::<ChaCha8Rng>(&rev, &rev_taus, None).unwrap();
    assert!((joint - reordered).abs() <= 1e-12);

    assert!(matches!(
        model.batch_loss::<ChaCha8Rng>(&refs, &taus[..5], None),
        Err(Error::DimensionMismatch { .. })
    ));
    let mut short = records[1].clone();
    short.measurements.pop();
    assert!(matches!(
        model.batch_loss::<ChaCha8Rng>(&[&records[0], &short], &taus[..2], None),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn batch_loss_by_hand() {
    let mut r = rng(10);
    let mut model = small_model(4, &mut r);
    let rec = toy_record(0, random_tree(4, &mut r), 1, &mut r);
    let y = rec.measurements[0].targets();
    // Predict the truth exactly, except log10 prevalence which is δ low.
    let delta = 0.4;
    model.init_output_layer([y[0], y[1] - delta, y[2]]);
    let tau = 0.3;
    let loss = model.batch_loss::<ChaCha8Rng>(&[&rec], &[tau], None).unwrap();
    let reff_err = pinball_loss(tau, softplus(softplus_inverse(y[0])), y[0]);
    assert!((loss - (tau * delta + reff_err)).abs() < 1e-12, "{loss}");

    model.init_output_layer(y);
    let perfect = model.batch_loss::<ChaCha8Rng>(&[&rec], &[0.8], None).unwrap();
    assert!(perfect < 1e-12);
}

fn simulated(n: usize, first_seed: u64, model: phylo_nbe::sim::SimModel) -> Vec<SimRecord> {
    phylo_nbe::sim::simulate_dataset(&phylo_nbe::sim::DatasetConfig {
        n_records: n,
        first_seed,
        model,
        ..Default::default()
    })
    .unwrap()
}

fn toy_train_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        seed: 11,
        optimizer: phylo_nbe::nn::AdamWConfig {
            learning_rate: 3e-3,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn initial_validation_loss_is_that_of_the_training_means() {
    use phylo_nbe::sim::SimModel;
    let tr = simulated(10, 0, SimModel::Standard);
    let val = simulated(5, 500, SimModel::Standard);
    let mut model = small_model(6, &mut rng(12));
    let report = train(&mut model, &tr, &val, &toy_train_config(1)).unwrap();

    let means = phylo_nbe::model::target_means(&tr, 10);
    let mut hand = 0.0;
    for rec in &val {
        for m in &rec.measurements {
            for tau in VALIDATION_TAUS {
                let pred = [softplus(softplus_inverse(means[0])), means[1], means[2]];
                hand += pred.iter().zip(m.targets()).map(|(p, y)| pinball_loss(tau, *p, y)).sum::<f64>();
            }
        }
    }
    hand /= (val.len() * 10 * VALIDATION_TAUS.len()) as f64;
    assert!((report.initial_val_loss - hand).abs() < 1e-12, "{} vs {hand}", report.initial_val_loss);
    assert_eq!(model.target_means, means);
}

#[test]
fn training_reduces_loss_and_replays_exactly() {
    use phylo_nbe::sim::SimModel;
    let tr = simulated(10, 0, SimModel::Standard);
    let val = simulated(5, 500, SimModel::Standard);
    let start = small_model(6, &mut rng(13));
    // Epoch losses carry the noise of the random quantile levels, so the
    // strict smoothed-monotone check is pinned to one seed; the drop in
    // loss is checked across seeds below.
    let cfg = TrainConfig {
        seed: 4,
        batch_size: 2,
        dropout: 0.0,
        optimizer: phylo_nbe::nn::AdamWConfig {
            learning_rate: 7e-3,
            ..Default::default()
        },
        ..toy_train_config(20)
    };

    let mut a = start.clone();
    let ra = train(&mut a, &tr, &val, &cfg).unwrap();
    assert_eq!(ra.curves.len(), 20);
    let smooth: Vec<f64> = ra
        .curves
        .windows(5)
        .map(|w| w.iter().map(|c| c.train_loss).sum::<f64>() / 5.0)
        .collect();
    for w in smooth.windows(2) {
        assert!(w[1] < w[0], "smoothed training loss rose: {smooth:?}");
    }
    let best = ra
        .curves
        .iter()
        .min_by(|x, y| x.val_loss.total_cmp(&y.val_loss))
        .unwrap();
    assert_eq!(ra.best_epoch, best.epoch);
    assert_eq!(validation_loss(&a, &val, 10).unwrap(), ra.best_val_loss);

    let mut b = start.clone();
    let rb = train(&mut b, &tr, &val, &cfg).unwrap();
    assert_eq!(ra.curves, rb.curves);
    assert_eq!(a, b);

    for seed in 0..6 {
        let mut m = start.clone();
        let rep = train(&mut m, &tr, &val, &TrainConfig { seed, ..cfg.clone() }).unwrap();
        let head: f64 = rep.curves[..5].iter().map(|c| c.train_loss).sum();
        let tail: f64 = rep.curves[15..].iter().map(|c| c.train_loss).sum();
        assert!(tail < 0.7 * head, "seed {seed}: {head} -> {tail}");
    }
}

#[test]
fn fine_tuning_freezes_the_embedding_and_helps() {
    use phylo_nbe::sim::{AltSamplingConfig, SimModel};
    let tr = simulated(10, 0, SimModel::Standard);
    let val = simulated(5, 500, SimModel::Standard);
    let mut model = small_model(6, &mut rng(14));
    train(&mut model, &tr, &val, &toy_train_config(5)).unwrap();

    let alt = SimModel::DelayedSampling(AltSamplingConfig::default());
    let alt_tr = simulated(10, 1000, alt.clone());
    let alt_val = simulated(5, 2000, alt);
    let mut tuned = model.clone();
    let report = fine_tune(&mut tuned, &alt_tr, &alt_val, &toy_train_config(10)).unwrap();
    assert_eq!(tuned.btu, model.btu);
    assert_eq!(tuned.normalization, model.normalization);
    assert_eq!(tuned.meta.as_ref().unwrap().mode, TrainMode::PredictionUnitOnly);
    let zero_shot = validation_loss(&model, &alt_val, 10).unwrap();
    assert_eq!(report.initial_val_loss, zero_shot);
    assert!(validation_loss(&tuned, &alt_val, 10).unwrap() < zero_shot);
}

#[test]
fn checkpoint_round_trip() {
    let mut r = rng(15);
    let mut model = small_model(5, &mut r);
    model.init_output_layer([2.0, 1.0, 1.5]);
    let text = model.to_json().unwrap();
    let back = NbeModel::from_json(&text).unwrap();
    assert_eq!(back, model);
    assert_eq!(back.to_json().unwrap(), text);

    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    for key in ["arch", "config", "btu", "pred", "normalization", "meta"] {
        assert!(value.get(key).is_some(), "missing {key}");
    }
    assert_eq!(value["config"]["channel_order"][0], "reff");

    let mut broken = model.clone();
    broken.pred = DenseNet::zeros(&[9, 3]);
    let text = broken.to_json().unwrap();
    assert!(matches!(NbeModel::from_json(&text), Err(Error::IncompatibleCheckpoint(_))));
}

#[test]
fn train_rejects_bad_input() {
    let mut r = rng(16);
    let mut model = small_model(4, &mut r);
    let recs: Vec<SimRecord> = (0..3).map(|i| toy_record(i, random_tree(5, &mut r), 10, &mut r)).collect();
    let cfg = toy_train_config(1);
    assert!(train(&mut model, &[], &recs, &cfg).is_err());
    let mut short = recs.clone();
    short[0].measurements.truncate(3);
    assert!(matches!(train(&mut model, &short, &recs, &cfg), Err(Error::DimensionMismatch { .. })));
    let mut bad = recs.clone();
    bad[1].measurements[0].reff = f64::NAN;
    assert!(train(&mut model, &bad, &recs, &cfg).is_err());
}
