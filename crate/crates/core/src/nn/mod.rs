//! Minimal forward/backward building blocks for the detection network:
//! valid-padding convolution, ReLU, 3×3 stride-1 max pooling, batch
//! normalization, inverted dropout, sigmoid/cross-entropy and plain SGD
//! with staircase exponential learning-rate decay.
//!
//! Every operation is a pure function of its inputs; the only mutation
//! points are the optimizer step and the batch-norm running statistics,
//! both owned exclusively by the training loop.

mod activation;
mod batchnorm;
mod conv;
mod dropout;
mod optimizer;
mod pool;

pub use activation::{bce_with_logits, relu, relu_backward, sigmoid, sigmoid_scalar};
pub use batchnorm::{
    batchnorm_backward, batchnorm_forward_infer, batchnorm_forward_train, BatchNormCache,
    BatchNormGrads, BatchNormState,
};
pub use conv::{conv2d_backward, conv2d_valid, ConvGrads, ConvParams};
pub use dropout::{dropout_backward, dropout_infer, dropout_train, DropoutMask};
pub use optimizer::OptimizerState;
pub use pool::{maxpool3x3_s1, maxpool3x3_s1_backward, PoolIndices};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("invalid dropout rate {0}: must satisfy 0 <= rate < 1")]
    InvalidDropoutRate(f64),
    #[error("batch normalization requires a non-empty batch in train mode")]
    EmptyBatch,
}
