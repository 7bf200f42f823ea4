//! Noise predictors.
//!
//! [`NoisePredictor`] is the only place the sampler touches the data
//! distribution. [`MixturePrior`] realizes the exact noise prediction for an
//! isotropic Gaussian mixture `p(x0) = sum_k w_k N(mu_k, sigma_k^2 I)`; a
//! component with `sigma_k = 0` is a single dataset point, so a list of
//! images becomes a prior with no training at all.
//!
//! Diffusing the mixture to level `t` keeps it a mixture with means
//! `sqrt(ab_t) mu_k` and variances `v_k = ab_t sigma_k^2 + (1 - ab_t)`, which
//! gives the score in closed form and `eps = -sqrt(1 - ab_t) * score`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::tensor::{load_image, load_tensor, ImageTensor, Shape};

/// `eps_theta(x_t, t)`.
pub trait NoisePredictor: Send + Sync {
    fn predict(&self, x_t: &ImageTensor, t: usize) -> Result<ImageTensor>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: ImageTensor,
    /// Isotropic variance `sigma^2`; zero for a point mass.
    pub variance: f64,
}

impl MixtureComponent {
    pub fn new(weight: f64, mean: ImageTensor, sigma: f64) -> Self {
        Self {
            weight,
            mean,
            variance: sigma * sigma,
        }
    }

    pub fn point(weight: f64, mean: ImageTensor) -> Self {
        Self::new(weight, mean, 0.0)
    }
}

#[derive(Debug, Clone)]
pub struct MixturePrior {
    components: Vec<MixtureComponent>,
    log_weights: Vec<f64>,
    schedule: Arc<NoiseSchedule>,
    shape: Shape,
}

impl MixturePrior {
    /// Builds the prior; weights are normalized to sum to one.
    pub fn new(components: Vec<MixtureComponent>, schedule: Arc<NoiseSchedule>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidArgument("mixture needs at least one component".into()))?;
        let shape = first.mean.shape();
        for c in &components {
            c.mean.ensure_shape(shape)?;
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "component weight {} must be positive",
                    c.weight
                )));
            }
            if !(c.variance >= 0.0 && c.variance.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "component variance {} must be >= 0",
                    c.variance
                )));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        let log_weights = components.iter().map(|c| (c.weight / total).ln()).collect();
        Ok(Self {
            components,
            log_weights,
            schedule,
            shape,
        })
    }

    /// Equal-weight point masses at each image.
    pub fn from_points(points: Vec<ImageTensor>, schedule: Arc<NoiseSchedule>) -> Result<Self> {
        Self::new(
            points.into_iter().map(|p| MixtureComponent::point(1.0, p)).collect(),
            schedule,
        )
    }

    pub fn gaussian(mean: ImageTensor, sigma: f64, schedule: Arc<NoiseSchedule>) -> Result<Self> {
        Self::new(vec![MixtureComponent::new(1.0, mean, sigma)], schedule)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    /// Normalized weights.
    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|l| l.exp()).collect()
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    /// Unnormalized component log-densities of `x_t` and each diffused variance.
    fn component_terms(&self, x_t: &ImageTensor, t: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        x_t.ensure_shape(self.shape)?;
        let ab = self.schedule.alpha_bar(t)?;
        let sab = ab.sqrt();
        let dim = self.shape.len() as f64;
        let mut logp = Vec::with_capacity(self.components.len());
        let mut vars = Vec::with_capacity(self.components.len());
        for (c, lw) in self.components.iter().zip(&self.log_weights) {
            let v = ab * c.variance + (1.0 - ab);
            let d2: f64 = x_t
                .data()
                .iter()
                .zip(c.mean.data())
                .map(|(x, m)| {
                    let r = x - sab * m;
                    r * r
                })
                .sum();
            logp.push(lw - 0.5 * dim * (2.0 * PI * v).ln() - d2 / (2.0 * v));
            vars.push(v);
        }
        Ok((logp, vars))
    }

    /// `log r_k(x_t)`, normalized with log-sum-exp.
    pub fn log_responsibilities(&self, x_t: &ImageTensor, t: usize) -> Result<Vec<f64>> {
        let (mut logp, _) = self.component_terms(x_t, t)?;
        let lse = log_sum_exp(&logp);
        for l in &mut logp {
            *l -= lse;
        }
        Ok(logp)
    }

    /// `grad_x log p_t(x_t)`.
    pub fn score(&self, x_t: &ImageTensor, t: usize) -> Result<ImageTensor> {
        let (logp, vars) = self.component_terms(x_t, t)?;
        let lse = log_sum_exp(&logp);
        let sab = self.schedule.alpha_bar(t)?.sqrt();
        let mut score = ImageTensor::zeros(self.shape);
        for ((c, l), v) in self.components.iter().zip(&logp).zip(&vars) {
            let r = (l - lse).exp();
            if r == 0.0 {
                continue;
            }
            let k = r / v;
            for ((s, x), m) in score.data_mut().iter_mut().zip(x_t.data()).zip(c.mean.data()) {
                *s += k * (sab * m - x);
            }
        }
        Ok(score)
    }
}

impl NoisePredictor for MixturePrior {
    fn predict(&self, x_t: &ImageTensor, t: usize) -> Result<ImageTensor> {
        let ab = self.schedule.alpha_bar(t)?;
        Ok(self.score(x_t, t)?.scale(-(1.0 - ab).sqrt()))
    }
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// JSON description of a mixture prior.
///
/// ```json
/// {"components": [{"weight": 1.0, "mean_file": "a.ppm", "sigma": 0.0}]}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub components: Vec<ComponentSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    #[serde(default = "one")]
    pub weight: f64,
    pub mean_file: PathBuf,
    #[serde(default)]
    pub sigma: f64,
}

fn one() -> f64 {
    1.0
}

/// Loads a `.pgt` tensor or a P5/P6 pixmap, picking by extension.
pub fn load_any(path: &Path) -> Result<ImageTensor> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgt") => load_tensor(path),
        _ => load_image(path),
    }
}

impl PriorSpec {
    /// Loads the component means, resolving relative paths against `base`.
    pub fn build(&self, schedule: Arc<NoiseSchedule>, base: &Path) -> Result<MixturePrior> {
        let components = self
            .components
            .iter()
            .map(|c| {
                let mean = load_any(&base.join(&c.mean_file))?;
                Ok(MixtureComponent::new(c.weight, mean, c.sigma))
            })
            .collect::<Result<Vec<_>>>()?;
        MixturePrior::new(components, schedule)
    }
}
