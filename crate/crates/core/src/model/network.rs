use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{BtuConfig, PredConfig};
use super::forward::{predict_rows, TreePlan};
use super::train::TrainMeta;
use crate::error::{Error, Result};
use crate::nn::{softplus, softplus_inverse, Activation, DenseNet, Dropout, Matrix, NetGrads, Tape, Var};
use crate::sim::SimRecord;
use crate::tree::ReconTree;

/// Output channels, in order.
pub const CHANNEL_ORDER: [&str; 3] = ["reff", "log10_prev", "log10_cum"];

/// Where the posterior is queried: `t` is time before the most recent
/// sample, in days.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileQuery {
    pub t: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileEstimate {
    pub t: f64,
    pub tau: f64,
    pub q_reff: f64,
    pub q_log10_prev: f64,
    pub q_log10_cum: f64,
}

impl QuantileEstimate {
    pub fn values(&self) -> [f64; 3] {
        [self.q_reff, self.q_log10_prev, self.q_log10_cum]
    }
}

/// Affine standardisation of the scalar inputs
/// `[t_h, sigma_inv / t_h, t / t_h, tau]`: `(x - mean) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub mean: [f64; 4],
    pub scale: [f64; 4],
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            mean: [0.0; 4],
            scale: [1.0; 4],
        }
    }
}

impl Normalization {
    /// Mean and standard deviation of the first three scalar inputs over the
    /// first `j` measurements of every record. The quantile level is left
    /// as is.
    pub fn fit(records: &[SimRecord], j: usize) -> Self {
        let mut sum = [0.0; 3];
        let mut sq = [0.0; 3];
        let mut count = 0.0;
        for rec in records {
            let h = rec.tree.height();
            for m in rec.measurements.iter().take(j) {
                let raw = raw_scalars(h, 1.0 / rec.sigma, time_before_present(rec, m.t), 0.0);
                for k in 0..3 {
                    sum[k] += raw[k];
                    sq[k] += raw[k] * raw[k];
                }
                count += 1.0;
            }
        }
        let mut norm = Normalization::default();
        if count < 2.0 {
            return norm;
        }
        for k in 0..3 {
            let mean = sum[k] / count;
            let var = (sq[k] / count - mean * mean).max(0.0);
            norm.mean[k] = mean;
            if var.sqrt() > 1e-12 {
                norm.scale[k] = var.sqrt();
            }
        }
        norm
    }

    pub fn apply(&self, raw: [f64; 4]) -> [f64; 4] {
        std::array::from_fn(|k| (raw[k] - self.mean[k]) / self.scale[k])
    }

    fn validate(&self) -> Result<()> {
        if self.mean.iter().all(|m| m.is_finite()) && self.scale.iter().all(|s| s.is_finite() && *s > 0.0) {
            Ok(())
        } else {
            Err(Error::IncompatibleCheckpoint("invalid normalization".into()))
        }
    }
}

fn raw_scalars(height: f64, sigma_inv: f64, t: f64, tau: f64) -> [f64; 4] {
    [height, sigma_inv / height, t / height, tau]
}

/// Query time of a measurement taken at absolute time `t`.
pub(crate) fn time_before_present(rec: &SimRecord, t: f64) -> f64 {
    (rec.t_present - t).max(0.0)
}

/// Tree embedding network plus prediction network.
#[derive(Debug, Clone, PartialEq)]
pub struct NbeModel {
    pub btu_config: BtuConfig,
    pub pred_config: PredConfig,
    /// `g`, folding two child embeddings and a node's own features.
    pub btu: DenseNet,
    /// `h`, from embedding and scalar inputs to the three outputs.
    pub pred: DenseNet,
    pub normalization: Normalization,
    /// Training-target means used to initialise the output bias.
    pub target_means: [f64; 3],
    pub meta: Option<TrainMeta>,
}

/// Inputs of a batch of queries, one row per (record, measurement).
pub(crate) struct QueryRows {
    pub tree_of: Vec<usize>,
    pub scalars: Matrix,
    pub targets: Matrix,
    pub taus: Vec<f64>,
}

impl NbeModel {
    pub fn new<R: Rng + ?Sized>(btu_config: BtuConfig, pred_config: PredConfig, rng: &mut R) -> Result<Self> {
        btu_config.validate()?;
        pred_config.validate()?;
        let btu = DenseNet::new(&btu_config.dims(), rng);
        let pred = DenseNet::new(&pred_config.dims(btu_config.embedding_dim), rng);
        Ok(NbeModel {
            btu_config,
            pred_config,
            btu,
            pred,
            normalization: Normalization::default(),
            target_means: [0.0; 3],
            meta: None,
        })
    }

    /// [`NbeModel::new`] with parameters drawn from a ChaCha8 stream
    /// derived from `seed`.
    pub fn seeded(btu_config: BtuConfig, pred_config: PredConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Keep initialisation draws apart from a training run on the same seed.
        rng.set_stream(1);
        Self::new(btu_config, pred_config, &mut rng)
    }

    pub fn embedding_dim(&self) -> usize {
        self.btu_config.embedding_dim
    }

    /// Zero the output weights and set the output bias so that every
    /// prediction equals `means` (through the softplus on channel 0).
    pub fn init_output_layer(&mut self, means: [f64; 3]) {
        self.target_means = means;
        let last = self.pred.layers.last_mut().expect("pred has layers");
        last.weights.data.iter_mut().for_each(|w| *w = 0.0);
        last.bias = vec![softplus_inverse(means[0]), means[1], means[2]];
    }

    /// Trees must be valid and, unless they are a single leaf, of positive
    /// height.
    pub fn check_tree(tree: &ReconTree) -> Result<()> {
        tree.validate()?;
        let h = tree.height();
        if tree.tip_count() > 1 && !(h > 0.0 && h.is_finite()) {
            return Err(Error::DegenerateTree);
        }
        Ok(())
    }

    /// Embedding of one tree. A single leaf embeds to the zero vector.
    pub fn btu_embed(&self, tree: &ReconTree) -> Result<Vec<f64>> {
        Self::check_tree(tree)?;
        let flat = tree.flatten();
        let mut tape = Tape::new(vec![&self.btu]);
        let plan = TreePlan::new(&[&flat], self.embedding_dim());
        let roots = plan.embed::<ChaCha8Rng>(&mut tape, 0, None);
        let (var, row) = roots[0];
        Ok(tape.value(var).row(row).to_vec())
    }

    /// Embeddings of many trees, one row each. Each tree is embedded on its
    /// own, so a row does not depend on which other trees are present.
    pub fn embed_many(&self, trees: &[&ReconTree]) -> Result<Matrix> {
        let rows: Vec<Vec<f64>> = trees.par_iter().map(|t| self.btu_embed(t)).collect::<Result<_>>()?;
        Ok(Matrix::from_vec(
            rows.len(),
            self.embedding_dim(),
            rows.into_iter().flatten().collect(),
        ))
    }

    fn check_query(sigma_inv: f64, t: f64, tau: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::InvalidArgument(format!("tau {tau} outside [0, 1]")));
        }
        if !(sigma_inv > 0.0 && sigma_inv.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma_inv {sigma_inv} must be positive")));
        }
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::InvalidArgument(format!("query time {t} must be non-negative")));
        }
        Ok(())
    }

    /// Quantiles for a tree whose embedding and height are already known.
    pub fn predict_from_embedding(
        &self,
        embedding: &[f64],
        height: f64,
        sigma_inv: f64,
        t: f64,
        tau: f64,
    ) -> Result<QuantileEstimate> {
        Self::check_query(sigma_inv, t, tau)?;
        if !(height > 0.0) {
            return Err(Error::DegenerateTree);
        }
        let n = self.embedding_dim();
        if embedding.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: embedding.len(),
            });
        }
        let mut x = Vec::with_capacity(n + 4);
        x.extend_from_slice(embedding);
        x.extend(self.normalization.apply(raw_scalars(height, sigma_inv, t, tau)));
        let y = self.pred.forward(&x, None)?;
        Ok(QuantileEstimate {
            t,
            tau,
            q_reff: softplus(y[0]),
            q_log10_prev: y[1],
            q_log10_cum: y[2],
        })
    }

    pub fn predict(&self, tree: &ReconTree, sigma_inv: f64, t: f64, tau: f64) -> Result<QuantileEstimate> {
        Ok(self.trajectory(tree, sigma_inv, &[t], &[tau])?.remove(0))
    }

    /// Every combination of `times` and `taus`, times varying slowest.
    pub fn trajectory(
        &self,
        tree: &ReconTree,
        sigma_inv: f64,
        times: &[f64],
        taus: &[f64],
    ) -> Result<Vec<QuantileEstimate>> {
        if times.is_empty() || taus.is_empty() {
            return Err(Error::InvalidArgument("empty time or tau grid".into()));
        }
        Self::check_tree(tree)?;
        let height = tree.height();
        if !(height > 0.0) {
            return Err(Error::DegenerateTree);
        }
        let emb = self.btu_embed(tree)?;
        let mut out = Vec::with_capacity(times.len() * taus.len());
        for &t in times {
            for &tau in taus {
                out.push(self.predict_from_embedding(&emb, height, sigma_inv, t, tau)?);
            }
        }
        Ok(out)
    }

    /// Query rows for the first `j` measurements of each record, with
    /// `taus[i]` used for all of record `i`'s rows.
    pub(crate) fn query_rows(&self, records: &[&SimRecord], taus: &[f64], j: usize) -> Result<QueryRows> {
        if taus.len() != records.len() {
            return Err(Error::DimensionMismatch {
                expected: records.len(),
                got: taus.len(),
            });
        }
        let rows = records.len() * j;
        let mut q = QueryRows {
            tree_of: Vec::with_capacity(rows),
            scalars: Matrix::zeros(rows, 4),
            targets: Matrix::zeros(rows, 3),
            taus: Vec::with_capacity(rows),
        };
        let mut r = 0;
        for (i, (rec, &tau)) in records.iter().zip(taus).enumerate() {
            if rec.measurements.len() < j {
                return Err(Error::DimensionMismatch {
                    expected: j,
                    got: rec.measurements.len(),
                });
            }
            let h = rec.tree.height();
            for m in &rec.measurements[..j] {
                let s = time_before_present(rec, m.t);
                let x = self.normalization.apply(raw_scalars(h, 1.0 / rec.sigma, s, tau));
                q.scalars.row_mut(r).copy_from_slice(&x);
                q.targets.row_mut(r).copy_from_slice(&m.targets());
                q.tree_of.push(i);
                q.taus.push(tau);
                r += 1;
            }
        }
        Ok(q)
    }

    /// Record the pinball loss of `rows` on `tape`, scaled by `scale`.
    /// `roots` gives each record's embedding on the tape. The tape's
    /// networks are `[btu, pred]`.
    pub(crate) fn record_loss<R: Rng + ?Sized>(
        tape: &mut Tape,
        roots: &[(Var, usize)],
        rows: QueryRows,
        scale: f64,
        dropout: Option<(Dropout, &mut R)>,
    ) -> Var {
        let out = predict_rows(tape, 1, roots, &rows.tree_of, rows.scalars, dropout);
        tape.pinball(out, rows.targets, rows.taus, scale)
    }

    /// Mean over records and measurements of the pinball loss summed over
    /// the three outputs, record `i` scored at level `taus[i]`. Every
    /// record must have the same number of measurements. With `dropout`,
    /// hidden units of both networks are dropped at the given rate.
    pub fn batch_loss<R: Rng + ?Sized>(
        &self,
        records: &[&SimRecord],
        taus: &[f64],
        dropout: Option<(f64, &mut R)>,
    ) -> Result<f64> {
        self.batch_loss_impl(records, taus, dropout, false).map(|(loss, _)| loss)
    }

    /// [`batch_loss`](Self::batch_loss) without dropout, together with its
    /// gradient with respect to the embedding and prediction networks.
    pub fn batch_gradients(&self, records: &[&SimRecord], taus: &[f64]) -> Result<(f64, NetGrads, NetGrads)> {
        let (loss, grads) = self.batch_loss_impl::<ChaCha8Rng>(records, taus, None, true)?;
        let [btu, pred]: [NetGrads; 2] = grads
            .expect("gradients requested")
            .try_into()
            .expect("two networks on the tape");
        Ok((loss, btu, pred))
    }

    fn batch_loss_impl<R: Rng + ?Sized>(
        &self,
        records: &[&SimRecord],
        taus: &[f64],
        mut dropout: Option<(f64, &mut R)>,
        gradients: bool,
    ) -> Result<(f64, Option<Vec<NetGrads>>)> {
        if records.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let j = records[0].measurements.len();
        if let Some(bad) = records.iter().find(|r| r.measurements.len() != j) {
            return Err(Error::DimensionMismatch {
                expected: j,
                got: bad.measurements.len(),
            });
        }
        let flats: Vec<_> = records
            .iter()
            .map(|r| {
                Self::check_tree(&r.tree)?;
                Ok(r.tree.flatten())
            })
            .collect::<Result<_>>()?;
        let rows = self.query_rows(records, taus, j)?;
        let mut tape = Tape::new(vec![&self.btu, &self.pred]);
        let plan = TreePlan::new(&flats.iter().collect::<Vec<_>>(), self.embedding_dim());
        let drop = dropout.as_mut().map(|(rate, rng)| (Dropout { rate: *rate }, &mut **rng));
        let roots = plan.embed(&mut tape, 0, drop);
        let scale = 1.0 / (records.len() * j) as f64;
        let drop = dropout.as_mut().map(|(rate, rng)| (Dropout { rate: *rate }, &mut **rng));
        let loss = Self::record_loss(&mut tape, &roots, rows, scale, drop);
        let value = tape.value(loss).data[0];
        Ok((value, gradients.then(|| tape.backward(loss))))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::IncompatibleCheckpoint(msg));
        self.btu_config.validate()?;
        self.pred_config.validate()?;
        self.btu
            .validate()
            .map_err(|e| Error::IncompatibleCheckpoint(format!("btu: {e}")))?;
        self.pred
            .validate()
            .map_err(|e| Error::IncompatibleCheckpoint(format!("pred: {e}")))?;
        if self.btu.dims() != self.btu_config.dims() {
            return bad(format!(
                "btu dims {:?} do not match config {:?}",
                self.btu.dims(),
                self.btu_config.dims()
            ));
        }
        let want = self.pred_config.dims(self.embedding_dim());
        if self.pred.dims() != want {
            return bad(format!("pred dims {:?} do not match config {want:?}", self.pred.dims()));
        }
        self.normalization.validate()
    }

    pub fn to_json(&self) -> Result<String> {
        let ckpt = CheckpointJson {
            arch: ArchJson {
                btu: NetArch {
                    dims: self.btu.dims(),
                    activation: self.btu.activation,
                    output: vec!["identity".into(); self.embedding_dim()],
                },
                pred: NetArch {
                    dims: self.pred.dims(),
                    activation: self.pred.activation,
                    output: vec!["softplus".into(), "identity".into(), "identity".into()],
                },
            },
            config: ModelConfigJson {
                n: self.embedding_dim(),
                btu: self.btu_config.clone(),
                pred: self.pred_config.clone(),
                channel_order: CHANNEL_ORDER.iter().map(|s| s.to_string()).collect(),
            },
            btu: self.btu.clone(),
            pred: self.pred.clone(),
            normalization: self.normalization,
            target_means: self.target_means,
            meta: self.meta.clone(),
        };
        Ok(serde_json::to_string(&ckpt)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: CheckpointJson =
            serde_json::from_str(text).map_err(|e| Error::IncompatibleCheckpoint(e.to_string()))?;
        if ckpt.config.channel_order != CHANNEL_ORDER {
            return Err(Error::IncompatibleCheckpoint(format!(
                "channel order {:?}",
                ckpt.config.channel_order
            )));
        }
        if ckpt.config.n != ckpt.config.btu.embedding_dim {
            return Err(Error::IncompatibleCheckpoint("embedding dim disagrees with n".into()));
        }
        if ckpt.arch.btu.dims != ckpt.btu.dims() || ckpt.arch.pred.dims != ckpt.pred.dims() {
            return Err(Error::IncompatibleCheckpoint("arch dims disagree with parameters".into()));
        }
        let model = NbeModel {
            btu_config: ckpt.config.btu,
            pred_config: ckpt.config.pred,
            btu: ckpt.btu,
            pred: ckpt.pred,
            normalization: ckpt.normalization,
            target_means: ckpt.target_means,
            meta: ckpt.meta,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetArch {
    dims: Vec<usize>,
    activation: Activation,
    output: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchJson {
    btu: NetArch,
    pred: NetArch,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelConfigJson {
    n: usize,
    btu: BtuConfig,
    pred: PredConfig,
    channel_order: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointJson {
    arch: ArchJson,
    config: ModelConfigJson,
    btu: DenseNet,
    pred: DenseNet,
    normalization: Normalization,
    target_means: [f64; 3],
    meta: Option<TrainMeta>,
}
