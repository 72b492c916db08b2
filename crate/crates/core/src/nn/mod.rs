//! Minimal dense-network engine: forward pass, exact analytic backward
//! pass, Adam, and the batch-statistics power normalization. Everything is
//! fp64 and deterministic; there is no autodiff graph, just the handful of
//! operations the autoencoder architecture needs.

pub mod adam;
pub mod batchnorm;
pub mod dense;
pub mod graph;
pub mod loss;
pub mod ops;

pub use adam::{AdamHyper, AdamState};
pub use batchnorm::{BatchNormPowerState, BnMode, VAR_FLOOR};
pub use dense::{dense_forward, DenseGrads, DenseParams, Mlp, MlpInput};
pub use graph::{training_loss, training_loss_and_grads, AeGrads, Normalization};
pub use loss::{cross_entropy, mean_cross_entropy, softmax, softmax_ce_grad, LOG_CLAMP};
