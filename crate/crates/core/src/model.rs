//! The 4-layer pore detection FCN.
//!
//! Three 3×3 conv stages (32, 64, 128 filters), each conv followed by ReLU,
//! batch normalization and 3×3 stride-1 max pooling, then dropout and a
//! final 5×5 single-filter conv with batch normalization and sigmoid.
//! Valid padding everywhere, so an M×N input maps to an (M-16)×(N-16)
//! probability map and the receptive field of one output unit is exactly
//! 17×17 input pixels.

use rand::Rng;

use crate::nn::{
    batchnorm_backward, batchnorm_forward_infer, batchnorm_forward_train, bce_with_logits,
    conv2d_backward, conv2d_valid, dropout_backward, dropout_train, maxpool3x3_s1,
    maxpool3x3_s1_backward, relu, relu_backward, sigmoid, BatchNormCache, BatchNormGrads,
    BatchNormState, ConvGrads, ConvParams, DropoutMask, NnError, OptimizerState,
};
use crate::tensor::FeatureMap;

/// Spatial shrinkage of the full network: 3 stages of (conv 3x3 + pool 3x3)
/// shrink by 4 each, the final 5x5 conv by another 4.
pub const RECEPTIVE_FIELD: usize = 17;
pub const SHRINK: usize = RECEPTIVE_FIELD - 1;

pub const STAGE_FILTERS: [usize; 4] = [32, 64, 128, 1];

/// One conv layer plus its batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub conv: ConvParams,
    pub bn: BatchNormState,
}

/// The full network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PoreModel {
    pub blocks: [ConvBlock; 4],
    pub dropout_rate: f64,
}

/// Per-layer gradients matching [`PoreModel`].
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub conv: Vec<ConvGrads>,
    pub bn: Vec<BatchNormGrads>,
}

impl ModelGrads {
    pub fn zeros_like(model: &PoreModel) -> Self {
        Self {
            conv: model
                .blocks
                .iter()
                .map(|b| ConvGrads::zeros_like(&b.conv))
                .collect(),
            bn: model
                .blocks
                .iter()
                .map(|b| BatchNormGrads::zeros(b.bn.channels()))
                .collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.conv {
            g.scale(s);
        }
        for g in &mut self.bn {
            g.scale(s);
        }
    }
}

struct StageCache {
    conv_input: Vec<FeatureMap>,
    pre_relu: Vec<FeatureMap>,
    bn_cache: BatchNormCache,
    bn_out_dims: (usize, usize, usize),
    pool_idx: Vec<crate::nn::PoolIndices>,
}

/// Intermediate activations of a train-mode forward pass.
pub struct TrainCache {
    stages: Vec<StageCache>,
    dropout_in: Vec<FeatureMap>,
    dropout_masks: Vec<DropoutMask>,
    conv4_input: Vec<FeatureMap>,
    bn4_cache: BatchNormCache,
}

fn uniform_fan_in(rng: &mut impl Rng, fan_in: usize, n: usize) -> Vec<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

impl PoreModel {
    /// Fresh model: fan-in-scaled uniform conv weights, zero biases,
    /// gamma 1 / beta 0 / running mean 0 / running var 1.
    pub fn init(rng: &mut impl Rng, dropout_rate: f64, bn_epsilon: f64, bn_momentum: f64) -> Self {
        let specs = [(3usize, 1usize, 32usize), (3, 32, 64), (3, 64, 128), (5, 128, 1)];
        let blocks = specs.map(|(k, cin, cout)| {
            let fan_in = k * k * cin;
            let mut conv = ConvParams::zeros(k, k, cin, cout);
            conv.weights = uniform_fan_in(rng, fan_in, conv.weight_count());
            ConvBlock {
                conv,
                bn: BatchNormState::new(cout, bn_epsilon, bn_momentum),
            }
        });
        Self {
            blocks,
            dropout_rate,
        }
    }

    /// Trainable parameters: conv weights and biases plus batch-norm gamma
    /// and beta. Running statistics are buffers, not parameters, and are
    /// excluded; see the README for the accounting discussion.
    pub fn param_count(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| b.conv.weights.len() + b.conv.bias.len() + b.bn.gamma.len() + b.bn.beta.len())
            .sum()
    }

    fn check_input(&self, input: &FeatureMap) -> Result<(), NnError> {
        let (h, w, c) = input.dims();
        if c != 1 {
            return Err(NnError::SizeMismatch(format!(
                "expected single-channel input, got {c} channels"
            )));
        }
        if h < RECEPTIVE_FIELD || w < RECEPTIVE_FIELD {
            return Err(NnError::SizeMismatch(format!(
                "input {h}x{w} smaller than the {RECEPTIVE_FIELD}x{RECEPTIVE_FIELD} receptive field"
            )));
        }
        Ok(())
    }

    /// Infer-mode forward pass for one image: probability map of dims
    /// (H-16)x(W-16)x1 with values strictly inside (0, 1).
    pub fn forward_infer(&self, input: &FeatureMap) -> Result<FeatureMap, NnError> {
        self.check_input(input)?;
        let mut x = input.clone();
        for block in &self.blocks[..3] {
            let x1 = conv2d_valid(&x, &block.conv)?;
            let x2 = relu(&x1);
            let x3 = batchnorm_forward_infer(&x2, &block.bn)?;
            let (x4, _) = maxpool3x3_s1(&x3)?;
            x = x4;
        }
        // dropout is identity at inference
        let block = &self.blocks[3];
        let logits = batchnorm_forward_infer(&conv2d_valid(&x, &block.conv)?, &block.bn)?;
        Ok(sigmoid(&logits))
    }

    /// Train-mode forward pass over a batch. Returns the pre-sigmoid logits
    /// and the cache needed by [`PoreModel::backward`]. Updates batch-norm
    /// running statistics.
    pub fn forward_train(
        &mut self,
        batch: &[FeatureMap],
        rng: &mut impl Rng,
    ) -> Result<(Vec<FeatureMap>, TrainCache), NnError> {
        if batch.is_empty() {
            return Err(NnError::EmptyBatch);
        }
        for m in batch {
            self.check_input(m)?;
        }
        let mut x: Vec<FeatureMap> = batch.to_vec();
        let mut stages = Vec::with_capacity(3);
        for si in 0..3 {
            let conv_input = x;
            let pre_relu: Vec<FeatureMap> = conv_input
                .iter()
                .map(|m| conv2d_valid(m, &self.blocks[si].conv))
                .collect::<Result<_, _>>()?;
            let post_relu: Vec<FeatureMap> = pre_relu.iter().map(relu).collect();
            let (bn_out, bn_cache) =
                batchnorm_forward_train(&post_relu, &mut self.blocks[si].bn)?;
            let bn_out_dims = bn_out[0].dims();
            let mut pooled = Vec::with_capacity(bn_out.len());
            let mut pool_idx = Vec::with_capacity(bn_out.len());
            for m in &bn_out {
                let (p, idx) = maxpool3x3_s1(m)?;
                pooled.push(p);
                pool_idx.push(idx);
            }
            stages.push(StageCache {
                conv_input,
                pre_relu,
                bn_cache,
                bn_out_dims,
                pool_idx,
            });
            x = pooled;
        }

        let dropout_in = x;
        let mut dropped = Vec::with_capacity(dropout_in.len());
        let mut dropout_masks = Vec::with_capacity(dropout_in.len());
        for m in &dropout_in {
            let (d, mask) = dropout_train(m, self.dropout_rate, rng)?;
            dropped.push(d);
            dropout_masks.push(mask);
        }

        let conv4_input = dropped;
        let conv4_out: Vec<FeatureMap> = conv4_input
            .iter()
            .map(|m| conv2d_valid(m, &self.blocks[3].conv))
            .collect::<Result<_, _>>()?;
        let (logits, bn4_cache) = batchnorm_forward_train(&conv4_out, &mut self.blocks[3].bn)?;

        Ok((
            logits,
            TrainCache {
                stages,
                dropout_in,
                dropout_masks,
                conv4_input,
                bn4_cache,
            },
        ))
    }

    /// Backward pass through the whole network given dloss/dlogit per sample.
    pub fn backward(
        &self,
        cache: &TrainCache,
        grad_logits: &[FeatureMap],
    ) -> Result<ModelGrads, NnError> {
        let mut grads = ModelGrads::zeros_like(self);

        // layer 4: batch norm then conv
        let (grad_conv4_out, bn4_grads) =
            batchnorm_backward(&cache.bn4_cache, grad_logits, &self.blocks[3].bn)?;
        grads.bn[3] = bn4_grads;
        let mut grad_pool_out: Vec<FeatureMap> = Vec::with_capacity(grad_conv4_out.len());
        for (i, g) in grad_conv4_out.iter().enumerate() {
            let (gi, gp) = conv2d_backward(&cache.conv4_input[i], &self.blocks[3].conv, g)?;
            grads.conv[3].add_assign(&gp);
            let gi = dropout_backward(&gi, &cache.dropout_masks[i]);
            grad_pool_out.push(gi);
        }
        // sanity: dropout input dims match
        debug_assert!(grad_pool_out[0].same_dims(&cache.dropout_in[0]));

        // stages 3..1 in reverse: pool -> bn -> relu -> conv
        for si in (0..3).rev() {
            let stage = &cache.stages[si];
            let mut grad_bn_out = Vec::with_capacity(grad_pool_out.len());
            for (i, g) in grad_pool_out.iter().enumerate() {
                grad_bn_out.push(maxpool3x3_s1_backward(
                    stage.bn_out_dims,
                    &stage.pool_idx[i],
                    g,
                )?);
            }
            let (grad_relu_out, bn_grads) =
                batchnorm_backward(&stage.bn_cache, &grad_bn_out, &self.blocks[si].bn)?;
            grads.bn[si] = bn_grads;
            let mut grad_prev = Vec::with_capacity(grad_relu_out.len());
            for (i, g) in grad_relu_out.iter().enumerate() {
                let g = relu_backward(&stage.pre_relu[i], g);
                let (gi, gp) = conv2d_backward(&stage.conv_input[i], &self.blocks[si].conv, &g)?;
                grads.conv[si].add_assign(&gp);
                grad_prev.push(gi);
            }
            grad_pool_out = grad_prev;
        }
        Ok(grads)
    }

    /// Replace the batch-norm running statistics with the exact activation
    /// statistics of `batch` under the current weights.
    ///
    /// The running estimates lag the weights during training (momentum
    /// 0.99 averages over the last few hundred steps), which miscalibrates
    /// infer-mode probabilities; one frozen-weight pass over a large batch
    /// fixes that. Dropout is disabled so the statistics match inference.
    pub fn calibrate_bn(&mut self, batch: &[FeatureMap]) -> Result<(), NnError> {
        let saved: Vec<f64> = self.blocks.iter().map(|b| b.bn.momentum).collect();
        let saved_dropout = self.dropout_rate;
        for block in &mut self.blocks {
            block.bn.momentum = 0.0;
        }
        self.dropout_rate = 0.0;
        // dropout rate 0 draws nothing from the rng
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let result = self.forward_train(batch, &mut rng).map(|_| ());
        for (block, m) in self.blocks.iter_mut().zip(saved) {
            block.bn.momentum = m;
        }
        self.dropout_rate = saved_dropout;
        result
    }

    /// One SGD step over every trainable tensor; advances the schedule once.
    pub fn sgd_update(
        &mut self,
        grads: &ModelGrads,
        opt: &mut OptimizerState,
    ) -> Result<(), NnError> {
        for (i, block) in self.blocks.iter_mut().enumerate() {
            opt.apply(&mut block.conv.weights, &grads.conv[i].weights)?;
            opt.apply(&mut block.conv.bias, &grads.conv[i].bias)?;
            opt.apply(&mut block.bn.gamma, &grads.bn[i].gamma)?;
            opt.apply(&mut block.bn.beta, &grads.bn[i].beta)?;
        }
        opt.advance();
        Ok(())
    }
}

/// Mean binary cross-entropy over a batch of logit maps against scalar
/// labels, with the per-sample logit gradients already divided by the
/// batch size.
pub fn batch_bce(
    logits: &[FeatureMap],
    labels: &[f64],
) -> Result<(f64, Vec<FeatureMap>), NnError> {
    if logits.len() != labels.len() {
        return Err(NnError::SizeMismatch(format!(
            "{} logit maps vs {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let inv_n = 1.0 / logits.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (m, &y) in logits.iter().zip(labels) {
        let mut g = m.clone();
        for v in g.data_mut() {
            let (loss, grad) = bce_with_logits(*v, y);
            total += loss;
            *v = grad * inv_n;
        }
        grads.push(g);
    }
    Ok((total * inv_n, grads))
}
