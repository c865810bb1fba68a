//! Per-channel batch normalization over (batch, height, width).
//!
//! Train mode normalizes by batch statistics and updates running statistics
//! with an exponential moving average; infer mode normalizes by the running
//! statistics and is deterministic.

use crate::tensor::FeatureMap;

use super::NnError;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub epsilon: f64,
    pub momentum: f64,
}

impl BatchNormState {
    pub fn new(channels: usize, epsilon: f64, momentum: f64) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            epsilon,
            momentum,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, input_channels: usize) -> Result<(), NnError> {
        let c = self.channels();
        if self.beta.len() != c || self.running_mean.len() != c || self.running_var.len() != c {
            return Err(NnError::SizeMismatch(
                "batch-norm per-channel arrays have inconsistent lengths".into(),
            ));
        }
        if input_channels != c {
            return Err(NnError::SizeMismatch(format!(
                "batch norm over {c} channels applied to {input_channels}-channel input"
            )));
        }
        Ok(())
    }
}

/// Values retained by the train-mode forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    /// Normalized (pre gamma/beta) activations, one per batch sample.
    pub x_hat: Vec<FeatureMap>,
    pub inv_std: Vec<f64>,
    /// Elements per channel: batch * height * width.
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl BatchNormGrads {
    pub fn zeros(channels: usize) -> Self {
        Self {
            gamma: vec![0.0; channels],
            beta: vec![0.0; channels],
        }
    }

    pub fn add_assign(&mut self, other: &BatchNormGrads) {
        for (a, b) in self.gamma.iter_mut().zip(&other.gamma) {
            *a += b;
        }
        for (a, b) in self.beta.iter_mut().zip(&other.beta) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.gamma {
            *v *= s;
        }
        for v in &mut self.beta {
            *v *= s;
        }
    }
}

/// Normalize a batch by its own statistics and update running statistics.
pub fn batchnorm_forward_train(
    batch: &[FeatureMap],
    state: &mut BatchNormState,
) -> Result<(Vec<FeatureMap>, BatchNormCache), NnError> {
    if batch.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let (h, w, c) = batch[0].dims();
    state.check(c)?;
    for m in batch {
        if m.dims() != (h, w, c) {
            return Err(NnError::SizeMismatch(
                "batch samples have differing dims".into(),
            ));
        }
    }
    let count = batch.len() * h * w;
    let inv_count = 1.0 / count as f64;

    let mut mean = vec![0.0; c];
    for m in batch {
        for px in m.data().chunks_exact(c) {
            for (acc, &v) in mean.iter_mut().zip(px) {
                *acc += v;
            }
        }
    }
    for v in &mut mean {
        *v *= inv_count;
    }

    let mut var = vec![0.0; c];
    for m in batch {
        for px in m.data().chunks_exact(c) {
            for ch in 0..c {
                let d = px[ch] - mean[ch];
                var[ch] += d * d;
            }
        }
    }
    for v in &mut var {
        *v *= inv_count;
    }

    let inv_std: Vec<f64> = var
        .iter()
        .map(|&v| 1.0 / (v + state.epsilon).sqrt())
        .collect();

    let mut x_hat = Vec::with_capacity(batch.len());
    let mut out = Vec::with_capacity(batch.len());
    for m in batch {
        let mut xh = FeatureMap::zeros(h, w, c);
        let mut o = FeatureMap::zeros(h, w, c);
        for ((xh_px, o_px), px) in xh
            .data_mut()
            .chunks_exact_mut(c)
            .zip(o.data_mut().chunks_exact_mut(c))
            .zip(m.data().chunks_exact(c))
        {
            for ch in 0..c {
                let n = (px[ch] - mean[ch]) * inv_std[ch];
                xh_px[ch] = n;
                o_px[ch] = state.gamma[ch] * n + state.beta[ch];
            }
        }
        x_hat.push(xh);
        out.push(o);
    }

    let keep = state.momentum;
    for ch in 0..c {
        state.running_mean[ch] = keep * state.running_mean[ch] + (1.0 - keep) * mean[ch];
        state.running_var[ch] = keep * state.running_var[ch] + (1.0 - keep) * var[ch];
    }

    Ok((
        out,
        BatchNormCache {
            x_hat,
            inv_std,
            count,
        },
    ))
}

/// Normalize by running statistics; pure and deterministic.
pub fn batchnorm_forward_infer(
    input: &FeatureMap,
    state: &BatchNormState,
) -> Result<FeatureMap, NnError> {
    let (h, w, c) = input.dims();
    state.check(c)?;
    let inv_std: Vec<f64> = state
        .running_var
        .iter()
        .map(|&v| 1.0 / (v + state.epsilon).sqrt())
        .collect();
    let mut out = FeatureMap::zeros(h, w, c);
    for (o_px, px) in out
        .data_mut()
        .chunks_exact_mut(c)
        .zip(input.data().chunks_exact(c))
    {
        for ch in 0..c {
            o_px[ch] =
                state.gamma[ch] * (px[ch] - state.running_mean[ch]) * inv_std[ch] + state.beta[ch];
        }
    }
    Ok(out)
}

/// Train-mode batch-norm gradients for input, gamma and beta.
pub fn batchnorm_backward(
    cache: &BatchNormCache,
    grad_out: &[FeatureMap],
    state: &BatchNormState,
) -> Result<(Vec<FeatureMap>, BatchNormGrads), NnError> {
    let c = state.channels();
    if grad_out.len() != cache.x_hat.len() {
        return Err(NnError::SizeMismatch(
            "grad_out batch size differs from cached forward batch".into(),
        ));
    }
    let mut grads = BatchNormGrads::zeros(c);
    for (go, xh) in grad_out.iter().zip(&cache.x_hat) {
        if go.dims() != xh.dims() {
            return Err(NnError::SizeMismatch(
                "grad_out sample dims differ from forward dims".into(),
            ));
        }
        for (go_px, xh_px) in go.data().chunks_exact(c).zip(xh.data().chunks_exact(c)) {
            for ch in 0..c {
                grads.gamma[ch] += go_px[ch] * xh_px[ch];
                grads.beta[ch] += go_px[ch];
            }
        }
    }

    let m = cache.count as f64;
    let mut grad_in = Vec::with_capacity(grad_out.len());
    for (go, xh) in grad_out.iter().zip(&cache.x_hat) {
        let (h, w, _) = go.dims();
        let mut gi = FeatureMap::zeros(h, w, c);
        for ((gi_px, go_px), xh_px) in gi
            .data_mut()
            .chunks_exact_mut(c)
            .zip(go.data().chunks_exact(c))
            .zip(xh.data().chunks_exact(c))
        {
            for ch in 0..c {
                let scale = state.gamma[ch] * cache.inv_std[ch] / m;
                gi_px[ch] = scale
                    * (m * go_px[ch] - grads.beta[ch] - xh_px[ch] * grads.gamma[ch]);
            }
        }
        grad_in.push(gi);
    }
    Ok((grad_in, grads))
}
