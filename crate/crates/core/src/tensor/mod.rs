//! Image tensors in model space.
//!
//! Images are stored channel-major (all of channel 0, then channel 1, ...)
//! with values nominally in `[-1, 1]`. Storage is `f64` so that the
//! forward/inverse noising relations stay exact to ~1e-12 even at the far
//! end of a 1000-step schedule where `sqrt(alpha_bar)` is ~6e-3.

mod color;
mod io;

pub use color::{adain, channel_stats, rgb2gray, ChannelStats, GRAY_WEIGHTS};
pub use io::{load_image, load_mask, load_tensor, save_image, save_mask, save_tensor, TENSOR_MAGIC};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// A `C x H x W` image or feature tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    shape: Shape,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::InvalidArgument(format!("empty tensor shape {shape}")));
        }
        if data.len() != shape.len() {
            return Err(Error::shape(
                format!("{} elements for {shape}", shape.len()),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize) -> f64) -> Self {
        Self {
            shape,
            data: (0..shape.len()).map(&mut f).collect(),
        }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.shape.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.shape.width
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.shape.plane();
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let plane = self.shape.plane();
        &mut self.data[c * plane..(c + 1) * plane]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.shape.height + y) * self.shape.width + x]
    }

    pub fn ensure_shape(&self, expected: Shape) -> Result<()> {
        if self.shape == expected {
            Ok(())
        } else {
            Err(Error::shape(expected, self.shape))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise `f(self, other)`; shapes must match.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        other.ensure_shape(self.shape)?;
        Ok(Self {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    /// `self += factor * other`.
    pub fn axpy(&mut self, factor: f64, other: &Self) -> Result<()> {
        other.ensure_shape(self.shape)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
        Ok(())
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        other.ensure_shape(self.shape)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Frobenius norm over all elements.
    pub fn norm(&self) -> f64 {
        self.sum_squares().sqrt()
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Self {
        self.map(|v| v.clamp(lo, hi))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn squared_distance(&self, other: &Self) -> Result<f64> {
        other.ensure_shape(self.shape)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum())
    }

    /// Repeats a single-channel tensor `channels` times.
    pub fn replicate_channels(&self, channels: usize) -> Result<Self> {
        if self.shape.channels != 1 {
            return Err(Error::shape("1 channel", self.shape));
        }
        let mut data = Vec::with_capacity(self.len() * channels);
        for _ in 0..channels {
            data.extend_from_slice(&self.data);
        }
        Ok(Self {
            shape: Shape::new(channels, self.shape.height, self.shape.width),
            data,
        })
    }
}

/// Binary mask; `1` marks a kept (unmasked) pixel, `0` a masked one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskTensor {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl MaskTensor {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(
                format!("{} mask values for {height}x{width}", height * width),
                format!("{} values", data.len()),
            ));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidArgument(format!("mask value {v} is not 0 or 1")));
        }
        Ok(Self { height, width, data })
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![1; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x) as u8);
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn count_kept(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// Checks that the mask covers the spatial extent of `shape`.
    pub fn ensure_matches(&self, shape: Shape) -> Result<()> {
        if self.height == shape.height && self.width == shape.width {
            Ok(())
        } else {
            Err(Error::shape(
                format!("mask {}x{}", shape.height, shape.width),
                format!("mask {}x{}", self.height, self.width),
            ))
        }
    }

    /// Mask value for flat tensor index `i`, broadcast across channels.
    #[inline]
    pub fn at_flat(&self, i: usize) -> f64 {
        self.data[i % self.data.len()] as f64
    }

    /// `B ⊗ img`.
    pub fn apply(&self, img: &ImageTensor) -> Result<ImageTensor> {
        self.ensure_matches(img.shape())?;
        Ok(ImageTensor::from_fn(img.shape(), |i| img.data()[i] * self.at_flat(i)))
    }
}
