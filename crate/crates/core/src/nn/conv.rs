//! Valid-padding, stride-1 2-D convolution (cross-correlation) and its
//! gradients.
//!
//! Weights are stored `[ky][kx][cin][cout]` with the output channel fastest,
//! so the innermost loops are contiguous channel-vector updates.

use crate::tensor::FeatureMap;

use super::NnError;

/// Parameters of one convolutional layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[kernel_h][kernel_w][in_channels][out_channels]`, out channel fastest.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvParams {
    pub fn zeros(kernel_h: usize, kernel_w: usize, in_channels: usize, out_channels: usize) -> Self {
        Self {
            kernel_h,
            kernel_w,
            in_channels,
            out_channels,
            weights: vec![0.0; kernel_h * kernel_w * in_channels * out_channels],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn weight_count(&self) -> usize {
        self.kernel_h * self.kernel_w * self.in_channels * self.out_channels
    }

    /// Weight vector over output channels for tap (ky, kx, ci).
    #[inline]
    fn tap(&self, ky: usize, kx: usize, ci: usize) -> &[f64] {
        let base = ((ky * self.kernel_w + kx) * self.in_channels + ci) * self.out_channels;
        &self.weights[base..base + self.out_channels]
    }

    fn check(&self) -> Result<(), NnError> {
        if self.weights.len() != self.weight_count() || self.bias.len() != self.out_channels {
            return Err(NnError::SizeMismatch(format!(
                "conv parameter arrays do not match declared dims \
                 {}x{}x{}x{}: {} weights, {} biases",
                self.kernel_h,
                self.kernel_w,
                self.in_channels,
                self.out_channels,
                self.weights.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }
}

/// Gradients with the same shapes as [`ConvParams`].
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvGrads {
    pub fn zeros_like(p: &ConvParams) -> Self {
        Self {
            weights: vec![0.0; p.weight_count()],
            bias: vec![0.0; p.out_channels],
        }
    }

    pub fn add_assign(&mut self, other: &ConvGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.weights {
            *v *= s;
        }
        for v in &mut self.bias {
            *v *= s;
        }
    }
}

fn check_input(input: &FeatureMap, params: &ConvParams) -> Result<(usize, usize), NnError> {
    params.check()?;
    let (h, w, c) = input.dims();
    if c != params.in_channels {
        return Err(NnError::SizeMismatch(format!(
            "conv expects {} input channels, got {c}",
            params.in_channels
        )));
    }
    if h < params.kernel_h || w < params.kernel_w {
        return Err(NnError::SizeMismatch(format!(
            "input {h}x{w} smaller than {}x{} kernel",
            params.kernel_h, params.kernel_w
        )));
    }
    Ok((h - params.kernel_h + 1, w - params.kernel_w + 1))
}

/// Cross-correlation with valid padding and unit stride.
///
/// Output dims are `(H - kh + 1) x (W - kw + 1) x out_channels`.
pub fn conv2d_valid(input: &FeatureMap, params: &ConvParams) -> Result<FeatureMap, NnError> {
    let (oh, ow) = check_input(input, params)?;
    let co = params.out_channels;
    let mut out = FeatureMap::zeros(oh, ow, co);
    for y in 0..oh {
        for x in 0..ow {
            let out_px = out.pixel_mut(y, x);
            out_px.copy_from_slice(&params.bias);
            for ky in 0..params.kernel_h {
                let row = input.row(y + ky);
                let in_row = &row[x * params.in_channels..(x + params.kernel_w) * params.in_channels];
                for kx in 0..params.kernel_w {
                    let in_px = &in_row[kx * params.in_channels..(kx + 1) * params.in_channels];
                    for (ci, &a) in in_px.iter().enumerate() {
                        let w_row = params.tap(ky, kx, ci);
                        for (o, &w) in out_px.iter_mut().zip(w_row) {
                            *o += a * w;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of a scalar loss w.r.t. conv input, weights and bias.
///
/// `grad_out` must have the dims [`conv2d_valid`] would produce for `input`.
pub fn conv2d_backward(
    input: &FeatureMap,
    params: &ConvParams,
    grad_out: &FeatureMap,
) -> Result<(FeatureMap, ConvGrads), NnError> {
    let (oh, ow) = check_input(input, params)?;
    if grad_out.dims() != (oh, ow, params.out_channels) {
        return Err(NnError::SizeMismatch(format!(
            "grad_out dims {:?} do not match conv output {:?}",
            grad_out.dims(),
            (oh, ow, params.out_channels)
        )));
    }
    let (h, w, cin) = input.dims();
    let cout = params.out_channels;
    let mut grad_in = FeatureMap::zeros(h, w, cin);
    let mut grads = ConvGrads::zeros_like(params);
    for y in 0..oh {
        for x in 0..ow {
            let go_px = grad_out.pixel(y, x);
            for (b, &g) in grads.bias.iter_mut().zip(go_px) {
                *b += g;
            }
            for ky in 0..params.kernel_h {
                for kx in 0..params.kernel_w {
                    let in_px = input.pixel(y + ky, x + kx);
                    let gi_px = grad_in.pixel_mut(y + ky, x + kx);
                    for ci in 0..cin {
                        let w_row = params.tap(ky, kx, ci);
                        let gw_base = ((ky * params.kernel_w + kx) * cin + ci) * cout;
                        let gw_row = &mut grads.weights[gw_base..gw_base + cout];
                        let a = in_px[ci];
                        let mut acc = 0.0;
                        for co in 0..cout {
                            let g = go_px[co];
                            acc += w_row[co] * g;
                            gw_row[co] += a * g;
                        }
                        gi_px[ci] += acc;
                    }
                }
            }
        }
    }
    Ok((grad_in, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_padding_output_dims() {
        let input = FeatureMap::zeros(17, 17, 1);
        let params = ConvParams::zeros(3, 3, 1, 32);
        let out = conv2d_valid(&input, &params).unwrap();
        assert_eq!(out.dims(), (15, 15, 32));
    }

    #[test]
    fn zero_input_yields_bias() {
        let input = FeatureMap::zeros(5, 6, 2);
        let mut params = ConvParams::zeros(3, 3, 2, 4);
        for (i, b) in params.bias.iter_mut().enumerate() {
            *b = i as f64 + 0.5;
        }
        let out = conv2d_valid(&input, &params).unwrap();
        for y in 0..out.height() {
            for x in 0..out.width() {
                for c in 0..4 {
                    assert_eq!(out.get(y, x, c), c as f64 + 0.5);
                }
            }
        }
    }

    #[test]
    fn undersized_input_rejected() {
        let input = FeatureMap::zeros(1, 1, 1);
        let params = ConvParams::zeros(3, 3, 1, 1);
        assert!(matches!(
            conv2d_valid(&input, &params),
            Err(NnError::SizeMismatch(_))
        ));
    }

    #[test]
    fn channel_mismatch_rejected() {
        let input = FeatureMap::zeros(5, 5, 3);
        let params = ConvParams::zeros(3, 3, 2, 1);
        assert!(conv2d_valid(&input, &params).is_err());
    }

    #[test]
    fn backward_zero_grad_out_gives_zero_grads() {
        let mut input = FeatureMap::zeros(5, 5, 2);
        for (i, v) in input.data_mut().iter_mut().enumerate() {
            *v = (i as f64).sin();
        }
        let params = ConvParams::zeros(3, 3, 2, 4);
        let grad_out = FeatureMap::zeros(3, 3, 4);
        let (gi, gp) = conv2d_backward(&input, &params, &grad_out).unwrap();
        assert!(gi.data().iter().all(|&v| v == 0.0));
        assert!(gp.weights.iter().all(|&v| v == 0.0));
        assert!(gp.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_scalar_chain_rule() {
        // 1x1 input, 1x1x1->1 kernel: grad_weight = input * grad_out.
        let input = FeatureMap::from_vec(1, 1, 1, vec![3.0]).unwrap();
        let mut params = ConvParams::zeros(1, 1, 1, 1);
        params.weights[0] = 2.0;
        let grad_out = FeatureMap::from_vec(1, 1, 1, vec![5.0]).unwrap();
        let (gi, gp) = conv2d_backward(&input, &params, &grad_out).unwrap();
        assert_eq!(gp.weights[0], 15.0);
        assert_eq!(gp.bias[0], 5.0);
        assert_eq!(gi.get(0, 0, 0), 10.0);
    }

    #[test]
    fn backward_rejects_wrong_grad_dims() {
        let input = FeatureMap::zeros(5, 5, 1);
        let params = ConvParams::zeros(3, 3, 1, 2);
        let grad_out = FeatureMap::zeros(3, 3, 1);
        assert!(conv2d_backward(&input, &params, &grad_out).is_err());
    }
}
