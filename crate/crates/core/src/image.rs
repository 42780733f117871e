//! Float image and depth buffers shared by synthesis, matting, metrics and IO.

use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImageError {
    #[error("image dimensions must be positive, got {width}x{height}")]
    EmptyImage { width: usize, height: usize },
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    Channels(usize),
    #[error("buffer holds {got} values, expected {expected}")]
    Length { expected: usize, got: usize },
    #[error("value {value} at index {index} outside [0, 1]")]
    OutOfRange { index: usize, value: f32 },
    #[error("depth value {value} at index {index} is negative or not finite")]
    InvalidDepth { index: usize, value: f32 },
    #[error("dimension mismatch: {0}")]
    Mismatch(String),
}

/// Row-major, channel-interleaved float image with values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyImage { width, height });
        }
        if channels != 1 && channels != 3 {
            return Err(ImageError::Channels(channels));
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(ImageError::Length {
                expected,
                got: data.len(),
            });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(ImageError::OutOfRange { index, value });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds an image by clamping arbitrary values into [0, 1]. NaN maps to 0.
    pub fn from_clamped(width: usize, height: usize, channels: usize, mut data: Vec<f32>) -> Result<Self, ImageError> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(width, height, channels, data)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Result<Self, ImageError> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// `f(x, y, c)` for every sample, clamped into [0, 1].
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self, ImageError> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::from_clamped(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Values of one channel in row-major pixel order.
    pub fn channel(&self, c: usize) -> Vec<f32> {
        self.data.iter().skip(c).step_by(self.channels).copied().collect()
    }

    pub fn same_dims(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Grey images are replicated to three channels; RGB images are cloned.
    pub fn to_rgb(&self) -> ImageBuffer {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    /// 1xCxHxW tensor with values mapped from [0, 1] to [-1, 1].
    pub fn to_tensor(&self) -> Tensor {
        let (w, h, c) = (self.width, self.height, self.channels);
        let mut out = vec![0.0f32; w * h * c];
        for (i, &v) in self.data.iter().enumerate() {
            let (pixel, ch) = (i / c, i % c);
            out[ch * w * h + pixel] = v * 2.0 - 1.0;
        }
        Tensor::new([1, c, h, w], out).expect("dimensions are consistent")
    }

    /// Batch item `n` of an NCHW tensor in [-1, 1], mapped back to [0, 1] and clamped.
    pub fn from_tensor(t: &Tensor, n: usize) -> Result<ImageBuffer, TensorError> {
        let [batch, c, h, w] = t.shape();
        if n >= batch || (c != 1 && c != 3) {
            return Err(TensorError::Shape {
                op: "image_from_tensor",
                detail: format!("cannot take image {n} from tensor of shape {:?}", t.shape()),
            });
        }
        let plane = h * w;
        let base = n * c * plane;
        let src = t.data();
        let mut data = vec![0.0f32; plane * c];
        for pixel in 0..plane {
            for ch in 0..c {
                data[pixel * c + ch] = (src[base + ch * plane + pixel] + 1.0) * 0.5;
            }
        }
        ImageBuffer::from_clamped(w, h, c, data).map_err(|e| TensorError::Shape {
            op: "image_from_tensor",
            detail: e.to_string(),
        })
    }
}

/// Non-negative relative scene depth, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyImage { width, height });
        }
        if data.len() != width * height {
            return Err(ImageError::Length {
                expected: width * height,
                got: data.len(),
            });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(ImageError::InvalidDepth { index, value });
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Rescales to [0, 1] by min/max. A constant map becomes all zeros.
    pub fn normalized(&self) -> DepthMap {
        let lo = self.data.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let span = hi - lo;
        let data = if span > 0.0 {
            self.data.iter().map(|&v| ((v - lo) / span).clamp(0.0, 1.0)).collect()
        } else {
            vec![0.0; self.data.len()]
        };
        DepthMap {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }
}
