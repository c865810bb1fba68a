//! Fingerprint pore detection with a small fully convolutional network.
//!
//! The pipeline:
//!
//! 1. **nn / model** – a 4-layer FCN (three 3×3 conv stages with batch norm
//!    and 3×3 stride-1 max pooling, dropout, a final 5×5 conv with sigmoid)
//!    built from scratch with exact forward/backward passes. Valid padding
//!    and unit strides throughout, so an M×N image yields an
//!    (M-16)×(N-16) pore-probability map and a 17×17 input yields a scalar.
//! 2. **data** – PGM images plus 1-indexed `row col` pore annotations,
//!    positional train/validation/test split, stratified patch sampling.
//! 3. **train** – patch-based SGD (lr 0.1, ×0.96 every 2000 steps,
//!    batch 256, dropout 0.2) with patch-level F-score early stopping.
//! 4. **detect** – threshold the probability map into 7×7 boxes, merge with
//!    greedy NMS; the traditional connected-components baseline is kept for
//!    the post-processing ablation.
//! 5. **evaluate** – border exclusion, mutual-nearest-neighbor matching,
//!    TDR/FDR/F-score, and the 72-cell (p_t, i_t) grid search.
//! 6. **synth** – deterministic synthetic fingerprints with exact ground
//!    truth, so the whole pipeline is verifiable without the license-gated
//!    benchmark dataset.

pub mod checkpoint;
pub mod data;
pub mod detect;
pub mod evaluate;
pub mod model;
pub mod nn;
pub mod pgm;
pub mod synth;
pub mod tensor;
pub mod train;
