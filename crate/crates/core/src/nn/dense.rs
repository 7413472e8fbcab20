use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Hidden-layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Elu,
}

/// Exponential linear unit with `alpha = 1`.
pub fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Derivative of [`elu`]; taken as 1 at the origin.
pub fn elu_grad(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// `ln(1 + e^x)` without overflow for large `x`. Floored at the smallest
/// positive double so the result is strictly positive even where `e^x`
/// underflows.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p().max(f64::from_bits(1))
    }
}

/// Logistic function, the derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp_m1()).ln()
    } else {
        y.exp_m1().ln()
    }
}

/// One affine layer, `y = W x + b` with `W` of shape `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Multilayer perceptron: affine layers with the activation between them and
/// a plain affine output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    pub activation: Activation,
    pub layers: Vec<Layer>,
}

impl DenseNet {
    /// Random initialisation with the usual fan-in uniform scheme: weights
    /// and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "a network needs input and output dims");
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut draw = || (rng.random::<f64>() * 2.0 - 1.0) * bound;
                let weights = (0..fan_in * fan_out).map(|_| draw()).collect();
                let bias = (0..fan_out).map(|_| draw()).collect();
                Layer {
                    weights: Matrix::from_vec(fan_out, fan_in, weights),
                    bias,
                }
            })
            .collect();
        DenseNet {
            activation: Activation::Elu,
            layers,
        }
    }

    /// All-zero network with the given layer dims.
    pub fn zeros(dims: &[usize]) -> Self {
        DenseNet {
            activation: Activation::Elu,
            layers: dims
                .windows(2)
                .map(|w| Layer {
                    weights: Matrix::zeros(w[1], w[0]),
                    bias: vec![0.0; w[1]],
                })
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weights.rows)
    }

    /// Input dim followed by each layer's output dim.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.weights.rows))
            .collect()
    }

    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.data.len() + l.bias.len()).sum()
    }

    /// Check shapes chain and every parameter is finite.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument("network has no layers".into()));
        }
        for pair in self.layers.windows(2) {
            if pair[1].weights.cols != pair[0].weights.rows {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].weights.rows,
                    got: pair[1].weights.cols,
                });
            }
        }
        for l in &self.layers {
            if l.bias.len() != l.weights.rows || l.weights.data.len() != l.weights.rows * l.weights.cols {
                return Err(Error::DimensionMismatch {
                    expected: l.weights.rows,
                    got: l.bias.len(),
                });
            }
            if l.weights.data.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("non-finite network parameter".into()));
            }
        }
        Ok(())
    }

    /// Single-vector forward pass. `masks`, if given, holds one
    /// multiplicative mask per hidden layer (see [`Dropout::masks`]).
    pub fn forward(&self, x: &[f64], masks: Option<&[Vec<f64>]>) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = layer.bias.clone();
            for (r, out) in y.iter_mut().enumerate() {
                *out += layer.weights.row(r).iter().zip(&h).map(|(w, v)| w * v).sum::<f64>();
            }
            if i < last {
                y.iter_mut().for_each(|v| *v = elu(*v));
                if let Some(m) = masks.and_then(|m| m.get(i)) {
                    if m.len() != y.len() {
                        return Err(Error::DimensionMismatch {
                            expected: y.len(),
                            got: m.len(),
                        });
                    }
                    y.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
                }
            }
            h = y;
        }
        Ok(h)
    }

    /// Parameters flattened layer by layer, weights (row-major) then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights.data);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut k = 0;
        for l in &mut self.layers {
            let n = l.weights.data.len();
            l.weights.data.copy_from_slice(&flat[k..k + n]);
            k += n;
            let n = l.bias.len();
            l.bias.copy_from_slice(&flat[k..k + n]);
            k += n;
        }
    }

    /// Mutable parameter slices in [`DenseNet::flat_params`] order.
    pub fn param_slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.data.as_mut_slice(), l.bias.as_mut_slice()])
    }
}

/// Gradients congruent to one [`Layer`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Gradients congruent to a [`DenseNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub layers: Vec<LayerGrads>,
}

impl NetGrads {
    pub fn zeros_like(net: &DenseNet) -> Self {
        NetGrads {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: Matrix::zeros(l.weights.rows, l.weights.cols),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weights.data);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.data.as_slice(), l.bias.as_slice()])
    }

    /// `self += other`, in a fixed element order.
    pub fn add_assign(&mut self, other: &NetGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.data.iter_mut().zip(&b.weights.data).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for l in &mut self.layers {
            l.weights.data.iter_mut().for_each(|x| *x *= c);
            l.bias.iter_mut().for_each(|x| *x *= c);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Inverted dropout: a unit is zeroed with probability `rate` and survivors
/// are scaled by `1 / (1 - rate)`, so inference needs no rescaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub fn mask<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<f64> {
        let keep = 1.0 / (1.0 - self.rate);
        (0..len)
            .map(|_| if rng.random::<f64>() < self.rate { 0.0 } else { keep })
            .collect()
    }

    /// One mask per hidden layer of `net`.
    pub fn masks<R: Rng + ?Sized>(&self, net: &DenseNet, rng: &mut R) -> Vec<Vec<f64>> {
        net.layers[..net.hidden_layers()]
            .iter()
            .map(|l| self.mask(l.weights.rows, rng))
            .collect()
    }
}
