//! Inverted dropout: survivors are scaled by 1/(1-rate) at train time so
//! inference is the identity.

use rand::Rng;

use crate::tensor::FeatureMap;

use super::NnError;

/// Per-element keep mask, already scaled: 0 for dropped, 1/(1-rate) for kept.
#[derive(Debug, Clone)]
pub struct DropoutMask {
    pub scale: Vec<f64>,
}

/// Train-mode dropout. Each element is zeroed with probability `rate` and
/// survivors are scaled by `1/(1-rate)`.
pub fn dropout_train(
    input: &FeatureMap,
    rate: f64,
    rng: &mut impl Rng,
) -> Result<(FeatureMap, DropoutMask), NnError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::InvalidDropoutRate(rate));
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let mut out = input.clone();
    let mut scale = Vec::with_capacity(input.data().len());
    for v in out.data_mut() {
        let s = if rate > 0.0 && rng.random::<f64>() < rate {
            0.0
        } else {
            keep_scale
        };
        *v *= s;
        scale.push(s);
    }
    Ok((out, DropoutMask { scale }))
}

/// Infer-mode dropout is the identity for any valid rate.
pub fn dropout_infer(input: &FeatureMap, rate: f64) -> Result<FeatureMap, NnError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::InvalidDropoutRate(rate));
    }
    Ok(input.clone())
}

/// Backward pass: multiply by the stored mask.
pub fn dropout_backward(grad_out: &FeatureMap, mask: &DropoutMask) -> FeatureMap {
    let mut gi = grad_out.clone();
    for (g, &s) in gi.data_mut().iter_mut().zip(&mask.scale) {
        *g *= s;
    }
    gi
}
