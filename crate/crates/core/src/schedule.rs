//! Variance schedule and per-timestep DDPM coefficients.
//!
//! The public API is 1-based: timesteps run `t = 1..=T`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// Which fixed variance the reverse step uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceKind {
    /// `beta_t * (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t)`, with `beta_1` at `t = 1`.
    #[default]
    Posterior,
    /// Plain `beta_t`.
    Beta,
}

/// Serialized form of a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    #[serde(rename = "T")]
    pub num_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    #[serde(default)]
    pub variance: VarianceKind,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            num_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            variance: VarianceKind::Posterior,
        }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.num_steps, self.beta_start, self.beta_end).map(|s| s.with_variance(self.variance))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    posterior_variances: Vec<f64>,
    variance: VarianceKind,
}

impl NoiseSchedule {
    /// Linearly interpolated betas from `beta_start` at `t = 1` to `beta_end` at `t = T`.
    pub fn linear(num_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if num_steps == 0 {
            return Err(Error::InvalidSchedule("T must be at least 1".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "need 0 < beta_start <= beta_end < 1, got beta_start={beta_start}, beta_end={beta_end}"
            )));
        }
        let betas = (0..num_steps)
            .map(|i| {
                if num_steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (num_steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidSchedule("T must be at least 1".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::InvalidSchedule(format!("beta {b} outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars: Vec<f64> = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        let posterior_variances = (0..betas.len())
            .map(|i| {
                if i == 0 {
                    betas[0]
                } else {
                    betas[i] * (1.0 - alpha_bars[i - 1]) / (1.0 - alpha_bars[i])
                }
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            posterior_variances,
            variance: VarianceKind::Posterior,
        })
    }

    pub fn with_variance(mut self, variance: VarianceKind) -> Self {
        self.variance = variance;
        self
    }

    pub fn variance_kind(&self) -> VarianceKind {
        self.variance
    }

    pub fn num_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn posterior_variances(&self) -> &[f64] {
        &self.posterior_variances
    }

    fn index(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.num_steps() {
            Err(Error::TimestepOutOfRange {
                t,
                num_steps: self.num_steps(),
            })
        } else {
            Ok(t - 1)
        }
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.betas[self.index(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alphas[self.index(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bars[self.index(t)?])
    }

    /// The reverse-step variance `Sigma_t` for the configured [`VarianceKind`].
    pub fn variance(&self, t: usize) -> Result<f64> {
        let i = self.index(t)?;
        Ok(match self.variance {
            VarianceKind::Posterior => self.posterior_variances[i],
            VarianceKind::Beta => self.betas[i],
        })
    }

    /// `sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * noise`.
    pub fn q_sample(&self, x0: &ImageTensor, t: usize, noise: &ImageTensor) -> Result<ImageTensor> {
        let ab = self.alpha_bar(t)?;
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        x0.zip_map(noise, |x, n| a * x + b * n)
    }

    /// One-shot clean-image estimate from `x_t` and a noise prediction.
    pub fn predict_x0(&self, x_t: &ImageTensor, t: usize, eps: &ImageTensor) -> Result<ImageTensor> {
        let ab = self.alpha_bar(t)?;
        let inv = 1.0 / ab.sqrt();
        let coef = ((1.0 - ab) / ab).sqrt();
        x_t.zip_map(eps, |x, e| inv * x - coef * e)
    }

    /// Unguided reverse-step mean.
    pub fn posterior_mean(&self, x_t: &ImageTensor, t: usize, eps: &ImageTensor) -> Result<ImageTensor> {
        let i = self.index(t)?;
        let inv = 1.0 / self.alphas[i].sqrt();
        let coef = self.betas[i] / (1.0 - self.alpha_bars[i]).sqrt();
        x_t.zip_map(eps, |x, e| inv * (x - coef * e))
    }
}
