//! Dense-network engine: forward pass, losses with exact gradients, SGD.

pub mod checkpoint;
pub mod loss;
pub mod model;
pub mod ops;

pub use checkpoint::{checkpoint_bytes, read_checkpoint, write_checkpoint};
pub use loss::{add_proximal_term, client_loss_and_grads, cross_entropy_loss_and_grads, plugin_loss_and_grads};
pub use model::{Activation, Batch, GradientSet, LayerParams, Matrix, ModelParams, ModelSpec};
pub use ops::{cross_entropy, forward, kl_divergence, predict, sgd_step, softmax, PROB_FLOOR};
