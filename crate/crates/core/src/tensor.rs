//! Dense activation tensors for the detection network.
//!
//! A [`FeatureMap`] is a single H×W×C activation volume stored row-major with
//! the channel index fastest. Mini-batches are plain `Vec<FeatureMap>` (or
//! slices thereof); batch-wide operations like batch normalization iterate
//! over the samples.

use crate::nn::NnError;

/// H×W×C activation tensor, row-major, channels contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        assert!(height >= 1 && width >= 1 && channels >= 1);
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_vec(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self, NnError> {
        if height < 1 || width < 1 || channels < 1 {
            return Err(NnError::SizeMismatch(format!(
                "feature map dims must be >= 1, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(NnError::SizeMismatch(format!(
                "feature map {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Channel vector at pixel (y, x).
    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let base = (y * self.width + x) * self.channels;
        &self.data[base..base + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [f64] {
        let base = (y * self.width + x) * self.channels;
        &mut self.data[base..base + self.channels]
    }

    /// Contiguous row y: `width * channels` values.
    #[inline]
    pub fn row(&self, y: usize) -> &[f64] {
        let base = y * self.width * self.channels;
        &self.data[base..base + self.width * self.channels]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> FeatureMap {
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_dims(&self, other: &FeatureMap) -> bool {
        self.dims() == other.dims()
    }
}
