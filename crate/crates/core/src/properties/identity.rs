use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Evaluation, GuidanceProperty};
use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, Shape};

/// Maps an image to a feature vector and back-propagates through it.
pub trait FeatureExtractor: Send + Sync {
    fn dim(&self) -> usize;

    fn features(&self, img: &ImageTensor) -> Result<Vec<f64>>;

    /// Vector-Jacobian product: `J(img)^T upstream`.
    fn vjp(&self, img: &ImageTensor, upstream: &[f64]) -> Result<ImageTensor>;
}

/// Fixed seeded Gaussian linear map from flattened pixels to `dim` features,
/// entries `N(0, 1/n)`. Stands in for a face-recognition embedding.
#[derive(Debug, Clone)]
pub struct RandomProjection {
    shape: Shape,
    dim: usize,
    matrix: Vec<f64>,
}

impl RandomProjection {
    pub const DEFAULT_DIM: usize = 64;

    pub fn new(shape: Shape, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (shape.len() as f64).sqrt();
        let matrix = (0..dim * shape.len())
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self { shape, dim, matrix }
    }
}

impl FeatureExtractor for RandomProjection {
    fn dim(&self) -> usize {
        self.dim
    }

    fn features(&self, img: &ImageTensor) -> Result<Vec<f64>> {
        img.ensure_shape(self.shape)?;
        Ok(self
            .matrix
            .chunks_exact(self.shape.len())
            .map(|row| row.iter().zip(img.data()).map(|(a, b)| a * b).sum())
            .collect())
    }

    fn vjp(&self, img: &ImageTensor, upstream: &[f64]) -> Result<ImageTensor> {
        img.ensure_shape(self.shape)?;
        if upstream.len() != self.dim {
            return Err(Error::shape(
                format!("{} features", self.dim),
                format!("{} features", upstream.len()),
            ));
        }
        let mut out = ImageTensor::zeros(self.shape);
        for (row, u) in self.matrix.chunks_exact(self.shape.len()).zip(upstream) {
            for (o, a) in out.data_mut().iter_mut().zip(row) {
                *o += u * a;
            }
        }
        Ok(out)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `-beta * cos(features(x0_hat), features(y_ref))`.
pub struct IdentityProperty {
    extractor: Box<dyn FeatureExtractor>,
    reference: Vec<f64>,
    reference_norm: f64,
    beta: f64,
}

impl IdentityProperty {
    pub fn new(extractor: Box<dyn FeatureExtractor>, y_ref: &ImageTensor, beta: f64) -> Result<Self> {
        let reference = extractor.features(y_ref)?;
        let reference_norm = norm(&reference);
        if reference_norm == 0.0 {
            return Err(Error::ZeroNormFeatures("reference image"));
        }
        Ok(Self {
            extractor,
            reference,
            reference_norm,
            beta,
        })
    }

    pub fn similarity(&self, x0: &ImageTensor) -> Result<f64> {
        let v = self.extractor.features(x0)?;
        let nv = norm(&v);
        if nv == 0.0 {
            return Err(Error::ZeroNormFeatures("denoised estimate"));
        }
        Ok(dot(&v, &self.reference) / (nv * self.reference_norm))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl GuidanceProperty for IdentityProperty {
    fn name(&self) -> &str {
        "identity"
    }

    fn evaluate(&self, x0: &ImageTensor) -> Result<Evaluation> {
        let v = self.extractor.features(x0)?;
        let nv = norm(&v);
        if nv == 0.0 {
            return Err(Error::ZeroNormFeatures("denoised estimate"));
        }
        let nr = self.reference_norm;
        let cos = dot(&v, &self.reference) / (nv * nr);
        // d cos / d v = r / (|v||r|) - cos * v / |v|^2
        let upstream: Vec<f64> = v
            .iter()
            .zip(&self.reference)
            .map(|(vi, ri)| -self.beta * (ri / (nv * nr) - cos * vi / (nv * nv)))
            .collect();
        let grad = self.extractor.vjp(x0, &upstream)?;
        Ok(Evaluation {
            loss: -self.beta * cos,
            grad,
        })
    }
}
