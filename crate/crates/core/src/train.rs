//! Patch-based SGD training with patch-level F-score monitoring, early
//! stopping and in-memory best-checkpoint tracking.
//!
//! The monitor is the cheap patch-level F-score on a validation patch set
//! fixed once per run (all positive centers from the validation images plus
//! an equal count of seeded negative samples); the full detection F-score
//! is reserved for the post-processing grid search.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{sample_batch, DataError, ImagePair, PatchExample};
use crate::model::{batch_bce, PoreModel};
use crate::nn::{NnError, OptimizerState};
use crate::tensor::FeatureMap;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub decay_rate: f64,
    pub decay_steps: u64,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub weight_decay: f64,
    pub pos_fraction: f64,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
    /// Evaluate the validation monitor every this many steps.
    pub eval_every: u64,
    /// Stop after this many consecutive evaluations without improvement.
    pub patience: u64,
    pub max_steps: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.1,
            decay_rate: 0.96,
            decay_steps: 2000,
            batch_size: 256,
            dropout_rate: 0.2,
            weight_decay: 0.0,
            pos_fraction: 0.5,
            bn_epsilon: 1e-3,
            bn_momentum: 0.99,
            eval_every: 100,
            patience: 5,
            max_steps: 50_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: u64, loss: f64 },
    #[error("empty {0} set")]
    EmptySet(&'static str),
}

/// One training-log line.
#[derive(Debug, Clone, Copy)]
pub struct LogEntry {
    pub step: u64,
    pub effective_lr: f64,
    pub loss: f64,
    /// Present on evaluation steps.
    pub val_fscore: Option<f64>,
}

#[derive(Debug)]
pub struct TrainResult {
    /// Model state at the best validation F-score seen.
    pub model: PoreModel,
    pub best_val_fscore: f64,
    pub best_step: u64,
    pub final_step: u64,
    pub log: Vec<LogEntry>,
}

/// Precision, recall and F-score of patch classification at `threshold`.
pub fn patch_fscore(
    model: &PoreModel,
    patches: &[PatchExample],
    threshold: f64,
) -> Result<(f64, f64, f64), TrainError> {
    if patches.is_empty() {
        return Err(TrainError::EmptySet("patch"));
    }
    let (mut tp, mut fp, mut fne) = (0usize, 0usize, 0usize);
    for p in patches {
        let prob = model.forward_infer(&p.patch)?.get(0, 0, 0);
        let predicted = prob > threshold;
        match (predicted, p.label == 1.0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fne += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fne == 0 {
        0.0
    } else {
        tp as f64 / (tp + fne) as f64
    };
    Ok((precision, recall, fscore_from_pr(precision, recall)))
}

/// F = 2PR / (P + R), defined as 0 when P + R = 0.
pub fn fscore_from_pr(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Fixed validation patch set: every valid positive center from the
/// validation images plus an equal count of sampled negatives.
pub fn validation_patch_set(
    validation: &[ImagePair],
    rng: &mut impl Rng,
) -> Result<Vec<PatchExample>, TrainError> {
    let mut patches = Vec::new();
    for pair in validation {
        for &(r, c) in &pair.annotations.pores {
            if pair.image.center_is_valid(r, c) {
                patches.push(PatchExample {
                    patch: pair.image.extract_patch(r, c),
                    label: 1.0,
                });
            }
        }
    }
    if patches.is_empty() {
        return Err(TrainError::EmptySet("validation-positive"));
    }
    let n_neg = patches.len();
    let negatives = sample_batch(validation, n_neg, 0.0, rng)?;
    patches.extend(negatives);
    Ok(patches)
}

/// Run the training loop and return the best checkpoint plus the log.
pub fn train(
    train_images: &[ImagePair],
    validation_images: &[ImagePair],
    config: &TrainConfig,
) -> Result<TrainResult, TrainError> {
    if train_images.is_empty() {
        return Err(TrainError::EmptySet("training"));
    }
    if validation_images.is_empty() {
        return Err(TrainError::EmptySet("validation"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = PoreModel::init(
        &mut rng,
        config.dropout_rate,
        config.bn_epsilon,
        config.bn_momentum,
    );
    let mut opt = OptimizerState::new(
        config.base_lr,
        config.decay_rate,
        config.decay_steps,
        config.weight_decay,
    );
    // the monitor set is fixed once, from its own stream
    let mut val_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let val_patches = validation_patch_set(validation_images, &mut val_rng)?;

    let mut log = Vec::new();
    let mut best: Option<(PoreModel, f64, u64)> = None;
    let mut evals_since_improvement = 0u64;
    let mut step = 0u64;
    while step < config.max_steps {
        step += 1;
        let effective_lr = opt.effective_lr();
        let batch = sample_batch(
            train_images,
            config.batch_size,
            config.pos_fraction,
            &mut rng,
        )?;
        let patches: Vec<FeatureMap> = batch.iter().map(|p| p.patch.clone()).collect();
        let labels: Vec<f64> = batch.iter().map(|p| p.label).collect();
        let (logits, cache) = model.forward_train(&patches, &mut rng)?;
        let (loss, grad_logits) = batch_bce(&logits, &labels)?;
        if !loss.is_finite() {
            return Err(TrainError::Diverged { step, loss });
        }
        let grads = model.backward(&cache, &grad_logits)?;
        model.sgd_update(&grads, &mut opt)?;

        let mut val_fscore = None;
        if step % config.eval_every == 0 || step == config.max_steps {
            let (_, _, f) = patch_fscore(&model, &val_patches, 0.5)?;
            val_fscore = Some(f);
            let improved = best.as_ref().is_none_or(|(_, best_f, _)| f > *best_f);
            if improved {
                best = Some((model.clone(), f, step));
                evals_since_improvement = 0;
            } else {
                evals_since_improvement += 1;
            }
            log.push(LogEntry {
                step,
                effective_lr,
                loss,
                val_fscore,
            });
            if evals_since_improvement >= config.patience {
                break;
            }
            continue;
        }
        log.push(LogEntry {
            step,
            effective_lr,
            loss,
            val_fscore,
        });
    }
    let (mut best_model, best_val_fscore, best_step) =
        best.expect("at least one evaluation ran before exit");
    // running statistics lag the weights during training; re-estimate them
    // on one large frozen-weight batch so inference is calibrated
    let calib = sample_batch(
        train_images,
        config.batch_size.max(256) * 2,
        config.pos_fraction,
        &mut rng,
    )?;
    let calib_patches: Vec<FeatureMap> = calib.into_iter().map(|p| p.patch).collect();
    best_model.calibrate_bn(&calib_patches)?;
    Ok(TrainResult {
        model: best_model,
        best_val_fscore,
        best_step,
        final_step: step,
        log,
    })
}
