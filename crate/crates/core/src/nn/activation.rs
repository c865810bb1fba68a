//! ReLU, sigmoid and the binary cross-entropy loss computed stably from
//! the pre-sigmoid logit.

use crate::tensor::FeatureMap;

/// Elementwise max(0, x).
pub fn relu(input: &FeatureMap) -> FeatureMap {
    input.map(|v| v.max(0.0))
}

/// Passes gradient where the forward input was strictly positive.
///
/// The subgradient at exactly 0 is taken as 0.
pub fn relu_backward(input: &FeatureMap, grad_out: &FeatureMap) -> FeatureMap {
    debug_assert!(input.same_dims(grad_out));
    let mut gi = grad_out.clone();
    for (g, &x) in gi.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
    gi
}

#[inline]
pub fn sigmoid_scalar(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Elementwise logistic sigmoid.
pub fn sigmoid(input: &FeatureMap) -> FeatureMap {
    input.map(sigmoid_scalar)
}

/// Binary cross-entropy from the pre-sigmoid logit.
///
/// Returns `(loss, dloss/dlogit)`. The loss is evaluated as
/// `max(z, 0) - z*y + ln(1 + exp(-|z|))`, which never takes log of 0;
/// the logit gradient is `sigmoid(z) - y`.
pub fn bce_with_logits(logit: f64, label: f64) -> (f64, f64) {
    debug_assert!(label == 0.0 || label == 1.0);
    let loss = logit.max(0.0) - logit * label + (-logit.abs()).exp().ln_1p();
    let grad = sigmoid_scalar(logit) - label;
    (loss, grad)
}
