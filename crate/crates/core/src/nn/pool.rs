//! 3×3 max pooling with stride 1 and valid padding.
//!
//! Stride 1 is the only pooling choice consistent with the network's overall
//! 17×17 receptive field: each conv+pool stage shrinks the spatial dims by
//! exactly 4.

use crate::tensor::FeatureMap;

use super::NnError;

/// Flat input indices of each window maximum, one per output element.
#[derive(Debug, Clone)]
pub struct PoolIndices {
    pub argmax: Vec<usize>,
}

/// Max over each 3×3 window per channel; output is (H-2)×(W-2)×C.
pub fn maxpool3x3_s1(input: &FeatureMap) -> Result<(FeatureMap, PoolIndices), NnError> {
    let (h, w, c) = input.dims();
    if h < 3 || w < 3 {
        return Err(NnError::SizeMismatch(format!(
            "input {h}x{w} smaller than 3x3 pooling window"
        )));
    }
    let (oh, ow) = (h - 2, w - 2);
    let mut out = FeatureMap::zeros(oh, ow, c);
    let mut argmax = vec![0usize; oh * ow * c];
    for y in 0..oh {
        for x in 0..ow {
            let out_base = (y * ow + x) * c;
            for ch in 0..c {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for wy in 0..3 {
                    for wx in 0..3 {
                        let idx = ((y + wy) * w + (x + wx)) * c + ch;
                        let v = input.data()[idx];
                        if v > best {
                            best = v;
                            best_idx = idx;
                        }
                    }
                }
                out.data_mut()[out_base + ch] = best;
                argmax[out_base + ch] = best_idx;
            }
        }
    }
    Ok((out, PoolIndices { argmax }))
}

/// Routes each output gradient back to its window's argmax position.
pub fn maxpool3x3_s1_backward(
    input_dims: (usize, usize, usize),
    indices: &PoolIndices,
    grad_out: &FeatureMap,
) -> Result<FeatureMap, NnError> {
    let (h, w, c) = input_dims;
    if grad_out.dims() != (h - 2, w - 2, c) {
        return Err(NnError::SizeMismatch(format!(
            "grad_out dims {:?} do not match pool output {:?}",
            grad_out.dims(),
            (h - 2, w - 2, c)
        )));
    }
    let mut grad_in = FeatureMap::zeros(h, w, c);
    for (&idx, &g) in indices.argmax.iter().zip(grad_out.data()) {
        grad_in.data_mut()[idx] += g;
    }
    Ok(grad_in)
}
