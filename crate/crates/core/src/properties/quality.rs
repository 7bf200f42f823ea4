use super::{Evaluation, FeatureExtractor, GuidanceProperty};
use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, Shape};

/// Average-pool pyramid: level `l` is the `2^l x 2^l` block mean, for
/// `l = 1..=levels`, concatenated. Trailing rows/columns that do not fill a
/// block are dropped. A stand-in for multi-layer perceptual features.
#[derive(Debug, Clone)]
pub struct AvgPoolPyramid {
    shape: Shape,
    levels: u32,
}

impl AvgPoolPyramid {
    pub fn new(shape: Shape, levels: u32) -> Self {
        Self { shape, levels }
    }

    fn level_dims(&self, level: u32) -> (usize, usize, usize) {
        let f = 1usize << level;
        (f, self.shape.height / f, self.shape.width / f)
    }
}

impl FeatureExtractor for AvgPoolPyramid {
    fn dim(&self) -> usize {
        (1..=self.levels)
            .map(|l| {
                let (_, h, w) = self.level_dims(l);
                self.shape.channels * h * w
            })
            .sum()
    }

    fn features(&self, img: &ImageTensor) -> Result<Vec<f64>> {
        img.ensure_shape(self.shape)?;
        let mut out = Vec::with_capacity(self.dim());
        for level in 1..=self.levels {
            let (f, h, w) = self.level_dims(level);
            let norm = 1.0 / (f * f) as f64;
            for c in 0..self.shape.channels {
                for by in 0..h {
                    for bx in 0..w {
                        let mut acc = 0.0;
                        for y in by * f..(by + 1) * f {
                            for x in bx * f..(bx + 1) * f {
                                acc += img.get(c, y, x);
                            }
                        }
                        out.push(acc * norm);
                    }
                }
            }
        }
        Ok(out)
    }

    fn vjp(&self, img: &ImageTensor, upstream: &[f64]) -> Result<ImageTensor> {
        img.ensure_shape(self.shape)?;
        if upstream.len() != self.dim() {
            return Err(Error::shape(
                format!("{} features", self.dim()),
                format!("{} features", upstream.len()),
            ));
        }
        let mut grad = ImageTensor::zeros(self.shape);
        let width = self.shape.width;
        let mut u = upstream.iter();
        for level in 1..=self.levels {
            let (f, h, w) = self.level_dims(level);
            let norm = 1.0 / (f * f) as f64;
            for c in 0..self.shape.channels {
                let plane = grad.channel_mut(c);
                for by in 0..h {
                    for bx in 0..w {
                        let g = u.next().copied().unwrap_or_default() * norm;
                        for y in by * f..(by + 1) * f {
                            for x in bx * f..(bx + 1) * f {
                                plane[y * width + x] += g;
                            }
                        }
                    }
                }
            }
        }
        Ok(grad)
    }
}

/// Scalar realism score to be minimized.
pub trait Critic: Send + Sync {
    fn score(&self, img: &ImageTensor) -> f64;
    fn grad(&self, img: &ImageTensor) -> ImageTensor;
}

/// `mean(x^2)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanSquareCritic;

impl Critic for MeanSquareCritic {
    fn score(&self, img: &ImageTensor) -> f64 {
        img.sum_squares() / img.len() as f64
    }

    fn grad(&self, img: &ImageTensor) -> ImageTensor {
        img.scale(2.0 / img.len() as f64)
    }
}

/// `lambda_per * ||P(x0_hat) - P(y0)||^2 + lambda_gan * D(x0_hat)`.
pub struct QualityProperty {
    pyramid: Box<dyn FeatureExtractor>,
    critic: Box<dyn Critic>,
    target: Vec<f64>,
    shape: Shape,
    lambda_per: f64,
    lambda_gan: f64,
}

impl QualityProperty {
    pub fn new(
        pyramid: Box<dyn FeatureExtractor>,
        critic: Box<dyn Critic>,
        y0: &ImageTensor,
        lambda_per: f64,
        lambda_gan: f64,
    ) -> Result<Self> {
        let target = pyramid.features(y0)?;
        Ok(Self {
            pyramid,
            critic,
            target,
            shape: y0.shape(),
            lambda_per,
            lambda_gan,
        })
    }

    /// `(perceptual, critic)` terms before weighting.
    pub fn components(&self, x0: &ImageTensor) -> Result<(f64, f64)> {
        let f = self.pyramid.features(x0)?;
        let per = f.iter().zip(&self.target).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok((per, self.critic.score(x0)))
    }
}

impl GuidanceProperty for QualityProperty {
    fn name(&self) -> &str {
        "quality"
    }

    fn shape(&self) -> Option<Shape> {
        Some(self.shape)
    }

    fn evaluate(&self, x0: &ImageTensor) -> Result<Evaluation> {
        x0.ensure_shape(self.shape)?;
        let f = self.pyramid.features(x0)?;
        let residual: Vec<f64> = f.iter().zip(&self.target).map(|(a, b)| a - b).collect();
        let per: f64 = residual.iter().map(|r| r * r).sum();
        let upstream: Vec<f64> = residual.iter().map(|r| 2.0 * self.lambda_per * r).collect();
        let mut grad = self.pyramid.vjp(x0, &upstream)?;
        grad.axpy(self.lambda_gan, &self.critic.grad(x0))?;
        Ok(Evaluation {
            loss: self.lambda_per * per + self.lambda_gan * self.critic.score(x0),
            grad,
        })
    }
}
