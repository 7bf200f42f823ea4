//! Per-run metrics on model-range images.

use std::collections::BTreeMap;

use anyhow::Result;
use pguide_core::tensor::{channel_stats, rgb2gray};
use pguide_core::{ChannelStats, CompositeGuidance, ImageTensor, MaskTensor, TraceRecord};
use serde::{Deserialize, Serialize};

/// PSNR reported for an exact match, where the ratio is unbounded.
pub const PSNR_CAP: f64 = 100.0;
const PEAK: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsError {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    /// Number of guided gradient steps recorded.
    pub steps: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub first: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub last: BTreeMap<String, f64>,
    /// Guidance losses evaluated on the final sample.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub output: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unmasked_mse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psnr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lightness_mse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_channel_stats_error: Option<Vec<StatsError>>,
    pub loss_trace_summary: TraceSummary,
}

/// `10 log10(peak^2 / mse)` with peak 2, capped at [`PSNR_CAP`].
pub fn psnr(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (PEAK * PEAK / mse).log10()).min(PSNR_CAP)
}

fn mean_sq(a: &[f64], b: &[f64], keep: impl Fn(usize) -> f64) -> f64 {
    let mut sum = 0.0;
    let mut count = 0.0;
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        let w = keep(i);
        sum += w * (x - y) * (x - y);
        count += w;
    }
    if count > 0.0 {
        sum / count
    } else {
        0.0
    }
}

pub fn stats_error(output: &ImageTensor, target: &[ChannelStats]) -> Vec<StatsError> {
    channel_stats(output)
        .iter()
        .zip(target)
        .map(|(s, t)| StatsError {
            mean: (s.mean - t.mean).abs(),
            std: (s.std - t.std).abs(),
        })
        .collect()
}

pub struct MetricInputs<'a> {
    pub output: &'a ImageTensor,
    pub input: Option<&'a ImageTensor>,
    pub mask: Option<&'a MaskTensor>,
    pub color_target: Option<&'a [ChannelStats]>,
    pub lightness: bool,
    pub guidance: &'a CompositeGuidance,
    pub trace: &'a TraceRecord,
}

fn summarize(trace: &TraceRecord, guidance: &CompositeGuidance, output: &ImageTensor) -> Result<TraceSummary> {
    let mut summary = TraceSummary {
        steps: trace.entries.len(),
        first: trace.entries.first().map(|e| e.loss.clone()).unwrap_or_default(),
        last: trace.entries.last().map(|e| e.loss.clone()).unwrap_or_default(),
        output: BTreeMap::new(),
    };
    if !guidance.is_empty() {
        let eval = guidance.evaluate(output)?;
        summary.output = eval.terms.into_iter().collect();
    }
    Ok(summary)
}

/// Pixel metrics use the output clamped to `[-1, 1]`.
pub fn compute(m: MetricInputs<'_>) -> Result<MetricsReport> {
    let out = m.output.clamp(-1.0, 1.0);
    let mut report = MetricsReport {
        loss_trace_summary: summarize(m.trace, m.guidance, m.output)?,
        ..MetricsReport::default()
    };
    if let Some(y0) = m.input {
        let y0 = y0.clamp(-1.0, 1.0);
        let mse = match m.mask {
            Some(mask) => {
                let mse = mean_sq(out.data(), y0.data(), |i| mask.at_flat(i));
                report.unmasked_mse = Some(mse);
                mse
            }
            None => mean_sq(out.data(), y0.data(), |_| 1.0),
        };
        if m.color_target.is_none() {
            report.psnr = Some(psnr(mse));
        }
        if m.lightness {
            let gray_out = rgb2gray(&out)?;
            let gray_in = if y0.channels() == 3 { rgb2gray(&y0)? } else { y0.clone() };
            report.lightness_mse = Some(mean_sq(gray_out.data(), gray_in.data(), |_| 1.0));
        }
    }
    if let Some(target) = m.color_target {
        report.per_channel_stats_error = Some(stats_error(&out, target));
    }
    Ok(report)
}

impl MetricsReport {
    /// Flat `name -> value` view used when averaging runs.
    pub fn flatten(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        if let Some(v) = self.unmasked_mse {
            out.insert("unmasked_mse".into(), v);
        }
        if let Some(v) = self.psnr {
            out.insert("psnr".into(), v);
        }
        if let Some(v) = self.lightness_mse {
            out.insert("lightness_mse".into(), v);
        }
        if let Some(errs) = &self.per_channel_stats_error {
            let worst = errs.iter().map(|e| e.mean.max(e.std)).fold(0.0, f64::max);
            out.insert("max_stats_error".into(), worst);
        }
        for (name, v) in &self.loss_trace_summary.output {
            out.insert(format!("loss.{name}"), *v);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().values().all(|v| v.is_finite())
    }
}
