use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::config::{TauSampling, TrainConfig, TrainMode};
use super::forward::TreePlan;
use super::network::{NbeModel, Normalization};
use crate::error::{Error, Result};
use crate::nn::{Dropout, Matrix, OptimizerState, Tape};
use crate::sim::SimRecord;
use crate::tree::ReconTree;

/// Quantile levels at which validation loss is scored.
pub const VALIDATION_TAUS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

/// Provenance stored with a trained checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainMeta {
    pub seed: u64,
    pub mode: TrainMode,
    pub epochs: usize,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub n_train: usize,
    pub n_val: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub curves: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Validation loss of the model as it was before the first update.
    pub initial_val_loss: f64,
    pub wall_time: Duration,
}

fn check_records(records: &[SimRecord], j: usize, what: &str) -> Result<()> {
    if records.is_empty() {
        return Err(Error::InvalidArgument(format!("{what} set is empty")));
    }
    for rec in records {
        NbeModel::check_tree(&rec.tree)?;
        if rec.tree.tip_count() < 2 {
            return Err(Error::DegenerateTree);
        }
        if rec.measurements.len() < j {
            return Err(Error::DimensionMismatch {
                expected: j,
                got: rec.measurements.len(),
            });
        }
        if !(rec.sigma > 0.0 && rec.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("record {} has sigma {}", rec.seed, rec.sigma)));
        }
        if rec.measurements[..j].iter().any(|m| !m.targets().iter().all(|x| x.is_finite())) {
            return Err(Error::InvalidArgument(format!("record {} has non-finite targets", rec.seed)));
        }
    }
    Ok(())
}

/// Per-channel mean of the training targets.
pub fn target_means(records: &[SimRecord], j: usize) -> [f64; 3] {
    let mut sum = [0.0; 3];
    let mut count = 0.0;
    for rec in records {
        for m in rec.measurements.iter().take(j) {
            for (s, y) in sum.iter_mut().zip(m.targets()) {
                *s += y;
            }
            count += 1.0;
        }
    }
    sum.map(|s| s / count)
}

fn trees(records: &[SimRecord]) -> Vec<&ReconTree> {
    records.iter().map(|r| &r.tree).collect()
}

/// Mean pinball loss over the first `j` measurements of every record and
/// the levels in [`VALIDATION_TAUS`], without dropout.
pub fn validation_loss(model: &NbeModel, records: &[SimRecord], j: usize) -> Result<f64> {
    check_records(records, j, "validation")?;
    let emb = model.embed_many(&trees(records))?;
    validation_loss_cached(model, records, &emb, j)
}

fn validation_loss_cached(model: &NbeModel, records: &[SimRecord], emb: &Matrix, j: usize) -> Result<f64> {
    const CHUNK: usize = 256;
    let mut total = 0.0;
    for (c, chunk) in records.chunks(CHUNK).enumerate() {
        let refs: Vec<&SimRecord> = chunk.iter().collect();
        let first = c * CHUNK;
        let block = Matrix::from_vec(
            chunk.len(),
            emb.cols,
            emb.data[first * emb.cols..(first + chunk.len()) * emb.cols].to_vec(),
        );
        let mut tape = Tape::new(vec![&model.btu, &model.pred]);
        let ev = tape.input(block);
        let roots: Vec<_> = (0..chunk.len()).map(|i| (ev, i)).collect();
        for tau in VALIDATION_TAUS {
            let rows = model.query_rows(&refs, &vec![tau; chunk.len()], j)?;
            let loss = NbeModel::record_loss::<ChaCha8Rng>(&mut tape, &roots, rows, 1.0, None);
            total += tape.value(loss).data[0];
        }
    }
    Ok(total / (records.len() * j * VALIDATION_TAUS.len()) as f64)
}

/// Fit `model` to `train` with AdamW on the pinball loss, keeping the
/// parameters of the epoch with the lowest validation loss.
///
/// In full mode the output layer is first reset to predict the training
/// means (and the scalar-input standardisation is fitted if enabled). In
/// prediction-unit-only mode the model starts from its current parameters,
/// the embedding network is left untouched and tree embeddings are computed
/// once up front.
pub fn train(model: &mut NbeModel, train: &[SimRecord], val: &[SimRecord], cfg: &TrainConfig) -> Result<TrainReport> {
    let start = Instant::now();
    cfg.validate()?;
    let j = cfg.measurements_per_sim;
    check_records(train, j, "training")?;
    check_records(val, j, "validation")?;

    let frozen = cfg.mode == TrainMode::PredictionUnitOnly;
    if !frozen {
        if cfg.standardize_inputs {
            model.normalization = Normalization::fit(train, j);
        }
        model.init_output_layer(target_means(train, j));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tau_dist = Beta::new(cfg.tau_alpha, cfg.tau_beta)
        .map_err(|e| Error::InvalidArgument(format!("tau prior: {e}")))?;
    let dropout = Dropout { rate: cfg.dropout };
    let n = model.embedding_dim();

    let (train_emb, val_emb) = if frozen {
        (
            Some(model.embed_many(&trees(train))?),
            Some(model.embed_many(&trees(val))?),
        )
    } else {
        (None, None)
    };
    let flats: Vec<_> = if frozen {
        Vec::new()
    } else {
        train.iter().map(|r| r.tree.flatten()).collect()
    };
    let current_val_loss = |model: &NbeModel| match &val_emb {
        Some(emb) => validation_loss_cached(model, val, emb, j),
        None => validation_loss(model, val, j),
    };

    let initial_val_loss = current_val_loss(model)?;
    let mut opt_btu = OptimizerState::new(&model.btu, cfg.optimizer);
    let mut opt_pred = OptimizerState::new(&model.pred, cfg.optimizer);
    let mut best = (f64::INFINITY, 0, model.btu.clone(), model.pred.clone());
    let mut curves = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let recs: Vec<&SimRecord> = idx.iter().map(|&i| &train[i]).collect();
            let taus: Vec<f64> = match cfg.tau_sampling {
                TauSampling::PerRecord => idx.iter().map(|_| tau_dist.sample(&mut rng)).collect(),
                TauSampling::PerBatch => vec![tau_dist.sample(&mut rng); idx.len()],
            };
            let rows = model.query_rows(&recs, &taus, j)?;
            let scale = 1.0 / (idx.len() * j) as f64;

            let (value, grads) = {
                let mut tape = Tape::new(vec![&model.btu, &model.pred]);
                let roots = match &train_emb {
                    Some(emb) => {
                        let block = Matrix::from_rows(&idx.iter().map(|&i| emb.row(i).to_vec()).collect::<Vec<_>>());
                        let v = tape.input(block);
                        (0..idx.len()).map(|i| (v, i)).collect::<Vec<_>>()
                    }
                    None => {
                        let plan = TreePlan::new(&idx.iter().map(|&i| &flats[i]).collect::<Vec<_>>(), n);
                        plan.embed(&mut tape, 0, Some((dropout, &mut rng)))
                    }
                };
                let loss = NbeModel::record_loss(&mut tape, &roots, rows, scale, Some((dropout, &mut rng)));
                let value = tape.value(loss).data[0];
                (value, tape.backward(loss))
            };
            if !value.is_finite() || !grads.iter().all(|g| g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b, value });
            }
            if !frozen {
                opt_btu.step(&mut model.btu, &grads[0]);
            }
            opt_pred.step(&mut model.pred, &grads[1]);
            epoch_sum += value * idx.len() as f64;
        }

        let train_loss = epoch_sum / train.len() as f64;
        let val_loss = current_val_loss(model)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: train.len().div_ceil(cfg.batch_size),
                value: val_loss,
            });
        }
        curves.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best.0 {
            best = (val_loss, epoch, model.btu.clone(), model.pred.clone());
        }
    }

    let (best_val_loss, best_epoch, btu, pred) = best;
    model.btu = btu;
    model.pred = pred;
    model.meta = Some(TrainMeta {
        seed: cfg.seed,
        mode: cfg.mode,
        epochs: cfg.epochs,
        best_epoch,
        best_val_loss,
        n_train: train.len(),
        n_val: val.len(),
    });
    Ok(TrainReport {
        curves,
        best_epoch,
        best_val_loss,
        initial_val_loss,
        wall_time: start.elapsed(),
    })
}

/// Retrain only the prediction network of a pre-trained model.
pub fn fine_tune(model: &mut NbeModel, train_data: &[SimRecord], val: &[SimRecord], cfg: &TrainConfig) -> Result<TrainReport> {
    let cfg = TrainConfig {
        mode: TrainMode::PredictionUnitOnly,
        ..cfg.clone()
    };
    train(model, train_data, val, &cfg)
}
