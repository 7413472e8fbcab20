//! Small differentiable-computation kernel: dense networks, activations,
//! dropout, a reverse-mode tape over row-batched matrices, the pinball loss
//! and AdamW. Everything is `f64`.

pub mod adamw;
pub mod dense;
pub mod loss;
pub mod matrix;
pub mod tape;

pub use adamw::{adamw_update, AdamWConfig, OptimizerState};
pub use dense::{elu, elu_grad, softplus, softplus_inverse, Activation, DenseNet, Dropout, Layer, LayerGrads, NetGrads};
pub use loss::{pinball_grad, pinball_loss};
pub use matrix::Matrix;
pub use tape::{Piece, Tape, Var};
