//! Guided ancestral sampling with partial guidance.
//!
//! Each denoising step at level `t`:
//!
//! 1. `eps = predictor(x_t, t)`, then `mu`, `Sigma` and `x0_hat` from the schedule.
//! 2. Step-dependent guidance targets are refreshed from `(x_t, t)`.
//! 3. `(loss, grad)` of the composite guidance at `x0_hat`.
//! 4. One noise draw `n`; the unguided candidate is `x' = mu + sqrt(Sigma) n`.
//! 5. The scale is `s`, or with the dynamic weight
//!    `s_norm = s * ||x_t - x'|| / ||grad||`.
//! 6. Inside a multi-step range the state at level `t` is resampled from the
//!    guided distribution and steps 1-5 repeat, `N - 1` times in total, each
//!    with a fresh draw.
//! 7. `x_{t-1} = mu - shift + sqrt(Sigma) n`; at `t = 1` the guided mean is
//!    returned without noise.
//!
//! The shift is `s * Sigma * grad` for a constant scale. With the dynamic
//! weight it is `s_norm * grad`, so its norm is exactly `s * ||x_t - x'||`.
//! The gradient is taken with respect to `x0_hat` and applied as is; nothing
//! is differentiated through the noise predictor.
//!
//! The candidate `x'` and the final sample share the same draw, and every
//! step draws exactly `N(t)` noise tensors, so two runs with equal seeds
//! consume identical noise regardless of guidance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prior::NoisePredictor;
use crate::properties::CompositeGuidance;
use crate::rng::RandomStream;
use crate::schedule::NoiseSchedule;
use crate::tensor::{ImageTensor, Shape};

/// `N` gradient steps for every `t` with `start <= t <= end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiStepRange {
    pub steps: usize,
    pub start: usize,
    pub end: usize,
}

impl MultiStepRange {
    pub fn contains(&self, t: usize) -> bool {
        self.start <= t && t <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Gradient scale `s`.
    pub scale: f64,
    pub dynamic_weight: bool,
    /// Where overlapping ranges disagree the larger `N` wins.
    #[serde(default)]
    pub multi_steps: Vec<MultiStepRange>,
    pub seed: u64,
    #[serde(rename = "T")]
    pub num_steps: usize,
    /// Clamp `x0_hat` to `[-1, 1]` before evaluating guidance.
    #[serde(default)]
    pub clamp_x0: bool,
}

impl SamplerConfig {
    pub fn new(num_steps: usize, scale: f64, dynamic_weight: bool, seed: u64) -> Self {
        Self {
            scale,
            dynamic_weight,
            multi_steps: Vec::new(),
            seed,
            num_steps,
            clamp_x0: false,
        }
    }

    pub fn with_multi_step(mut self, steps: usize, start: usize, end: usize) -> Self {
        self.multi_steps.push(MultiStepRange { steps, start, end });
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Gradient steps to take at level `t`.
    pub fn steps_at(&self, t: usize) -> usize {
        self.multi_steps
            .iter()
            .filter(|r| r.contains(t))
            .map(|r| r.steps)
            .max()
            .unwrap_or(1)
    }

    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        if self.num_steps != schedule.num_steps() {
            return Err(Error::InvalidConfig(format!(
                "T = {} but the schedule has {} steps",
                self.num_steps,
                schedule.num_steps()
            )));
        }
        if !(self.scale >= 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "scale {} must be finite and >= 0",
                self.scale
            )));
        }
        for r in &self.multi_steps {
            if r.steps == 0 {
                return Err(Error::InvalidConfig("gradient step count must be >= 1".into()));
            }
            if !(1 <= r.start && r.start <= r.end && r.end <= self.num_steps) {
                return Err(Error::InvalidConfig(format!(
                    "gradient step range [{}, {}] not within 1..={}",
                    r.start, r.end, self.num_steps
                )));
            }
        }
        Ok(())
    }
}

/// One gradient application.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub t: usize,
    pub k: usize,
    pub loss: BTreeMap<String, f64>,
    /// `s` or `s_norm`.
    pub scale: f64,
    pub grad_norm: f64,
    /// `||x_t - x'||` against the unguided candidate.
    pub step_norm: f64,
    /// Norm of the shift subtracted from the mean.
    pub shift_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceRecord {
    pub entries: Vec<TraceEntry>,
}

impl TraceRecord {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("trace entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn last(&self) -> Option<&TraceEntry> {
        self.entries.last()
    }
}

/// `s * ||x_t - x'|| / ||g||`, or `None` when `g` vanishes.
pub fn dynamic_scale(
    x_t: &ImageTensor,
    candidate: &ImageTensor,
    grad: &ImageTensor,
    scale: f64,
) -> Result<Option<f64>> {
    let g = grad.norm();
    if g == 0.0 {
        return Ok(None);
    }
    Ok(Some(x_t.sub(candidate)?.norm() / g * scale))
}

pub struct GuidedSampler<'a> {
    schedule: &'a NoiseSchedule,
    predictor: &'a dyn NoisePredictor,
    config: &'a SamplerConfig,
    rng: RandomStream,
}

impl<'a> GuidedSampler<'a> {
    pub fn new(
        schedule: &'a NoiseSchedule,
        predictor: &'a dyn NoisePredictor,
        config: &'a SamplerConfig,
    ) -> Result<Self> {
        config.validate(schedule)?;
        Ok(Self {
            schedule,
            predictor,
            config,
            rng: RandomStream::new(config.seed),
        })
    }

    /// One full denoising step from level `t` to `t - 1`.
    pub fn step(
        &self,
        guidance: &mut CompositeGuidance,
        x_t: ImageTensor,
        t: usize,
        trace: Option<&mut TraceRecord>,
    ) -> Result<ImageTensor> {
        let mut trace = trace;
        let variance = self.schedule.variance(t)?;
        let sd = variance.sqrt();
        let repeats = self.config.steps_at(t);
        let mut x = x_t;
        for k in 0..repeats {
            let eps = self.predictor.predict(&x, t)?;
            x.ensure_shape(eps.shape())?;
            let mean = self.schedule.posterior_mean(&x, t, &eps)?;
            let noise = self.rng.normal_tensor(x.shape(), t, k, 0);
            let last = k + 1 == repeats;

            let mut shifted = mean.clone();
            if !guidance.is_empty() {
                let mut x0 = self.schedule.predict_x0(&x, t, &eps)?;
                if self.config.clamp_x0 {
                    x0 = x0.clamp(-1.0, 1.0);
                }
                guidance.refresh(&x, t)?;
                let eval = guidance.evaluate(&x0)?;
                check_finite(&eval.terms, &eval.grad, t, guidance)?;
                let grad_norm = eval.grad.norm();
                if grad_norm > 0.0 {
                    let candidate = mean.zip_map(&noise, |m, n| m + sd * n)?;
                    let step_norm = x.sub(&candidate)?.norm();
                    let (scale, factor) = if self.config.dynamic_weight {
                        let s = step_norm / grad_norm * self.config.scale;
                        (s, s)
                    } else {
                        (self.config.scale, self.config.scale * variance)
                    };
                    shifted = mean.zip_map(&eval.grad, |m, g| m - factor * g)?;
                    if let Some(trace) = trace.as_deref_mut() {
                        trace.entries.push(TraceEntry {
                            t,
                            k,
                            loss: loss_map(&eval.terms),
                            scale,
                            grad_norm,
                            step_norm,
                            shift_norm: factor * grad_norm,
                        });
                    }
                }
            }

            if last && t == 1 {
                return Ok(shifted);
            }
            let next = shifted.zip_map(&noise, |m, n| m + sd * n)?;
            if last {
                return Ok(next);
            }
            x = next;
        }
        unreachable!("steps_at is at least 1")
    }

    /// Runs `t = T..=1` from a seeded standard-normal `x_T`.
    pub fn sample(
        &self,
        guidance: &mut CompositeGuidance,
        shape: Shape,
        trace: bool,
    ) -> Result<(ImageTensor, TraceRecord)> {
        let mut record = TraceRecord::default();
        let mut x = self.rng.initial(shape);
        for t in (1..=self.config.num_steps).rev() {
            x = self.step(guidance, x, t, trace.then_some(&mut record))?;
        }
        Ok((x, record))
    }
}

fn loss_map(terms: &[(String, f64)]) -> BTreeMap<String, f64> {
    let mut map = BTreeMap::new();
    for (name, loss) in terms {
        let mut key = name.clone();
        let mut n = 2;
        while map.contains_key(&key) {
            key = format!("{name}#{n}");
            n += 1;
        }
        map.insert(key, *loss);
    }
    map
}

fn check_finite(terms: &[(String, f64)], grad: &ImageTensor, t: usize, guidance: &CompositeGuidance) -> Result<()> {
    if let Some((name, _)) = terms.iter().find(|(_, l)| !l.is_finite()) {
        return Err(Error::NonFiniteGuidance {
            property: name.clone(),
            what: "loss",
            t,
        });
    }
    if !grad.is_finite() {
        let names: Vec<_> = guidance.terms().iter().map(|term| term.property.name()).collect();
        return Err(Error::NonFiniteGuidance {
            property: names.join("+"),
            what: "gradient",
            t,
        });
    }
    Ok(())
}

/// Guided sampling in one call.
pub fn sample(
    schedule: &NoiseSchedule,
    predictor: &dyn NoisePredictor,
    guidance: &mut CompositeGuidance,
    config: &SamplerConfig,
    shape: Shape,
) -> Result<(ImageTensor, TraceRecord)> {
    GuidedSampler::new(schedule, predictor, config)?.sample(guidance, shape, true)
}

/// Plain ancestral sampling with the same noise addressing as [`GuidedSampler`].
pub fn sample_unconditional(
    schedule: &NoiseSchedule,
    predictor: &dyn NoisePredictor,
    seed: u64,
    shape: Shape,
) -> Result<ImageTensor> {
    let rng = RandomStream::new(seed);
    let mut x = rng.initial(shape);
    for t in (1..=schedule.num_steps()).rev() {
        let eps = predictor.predict(&x, t)?;
        let mean = schedule.posterior_mean(&x, t, &eps)?;
        if t == 1 {
            return Ok(mean);
        }
        let sd = schedule.variance(t)?.sqrt();
        let noise = rng.normal_tensor(shape, t, 0, 0);
        x = mean.zip_map(&noise, |m, n| m + sd * n)?;
    }
    Ok(x)
}
