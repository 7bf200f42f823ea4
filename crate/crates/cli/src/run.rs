//! Executes a resolved run and writes its artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use pguide_core::tensor::{save_image, save_tensor};
use pguide_core::{GuidedSampler, ImageTensor, TraceRecord};

use crate::config::{RunConfig, TaskSpec};
use crate::metrics::{self, MetricInputs, MetricsReport};
use crate::task;

pub struct RunOutcome {
    pub config: RunConfig,
    pub image: ImageTensor,
    pub trace: TraceRecord,
    pub metrics: MetricsReport,
}

/// Command-line overrides applied before resolution.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

/// Samples a resolved config in memory; nothing is written.
pub fn execute(config: &RunConfig) -> Result<RunOutcome> {
    let schedule = Arc::new(config.schedule.build().context("schedule")?);
    let prior = config.prior.build(schedule.clone(), Path::new("")).context("prior")?;
    let shape = prior.shape();
    let mut setup = task::build(&config.task, shape)?;
    let sampler_config = config.sampler_config();
    let sampler = GuidedSampler::new(&schedule, &prior, &sampler_config).context("sampler")?;
    let (image, trace) = sampler
        .sample(&mut setup.guidance, shape, true)
        .with_context(|| format!("{} run with seed {}", config.task.kind(), sampler_config.seed))?;
    let lightness = matches!(config.task, TaskSpec::Colorize { .. } | TaskSpec::Oldphoto { .. });
    let metrics = metrics::compute(MetricInputs {
        output: &image,
        input: setup.input.as_ref(),
        mask: setup.mask.as_ref(),
        color_target: setup.color_target.as_deref(),
        lightness,
        guidance: &setup.guidance,
        trace: &trace,
    })?;
    Ok(RunOutcome {
        config: config.clone(),
        image,
        trace,
        metrics,
    })
}

fn sibling(image: &Path, suffix: &str) -> PathBuf {
    let stem = image.file_stem().and_then(|s| s.to_str()).unwrap_or("output");
    image.with_file_name(format!("{stem}.{suffix}"))
}

/// `<image stem>.config.json`: the fully resolved config, runnable as is.
pub fn config_echo_path(config: &RunConfig) -> PathBuf {
    sibling(&config.output.image, "config.json")
}

pub fn metrics_path(config: &RunConfig) -> PathBuf {
    sibling(&config.output.image, "metrics.json")
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| parent.display().to_string())?;
    }
    Ok(())
}

pub fn write_outputs(outcome: &RunOutcome) -> Result<()> {
    let out = &outcome.config.output;
    create_parent(&out.image)?;
    save_image(&outcome.image, &out.image).context("output.image")?;
    if let Some(path) = &out.tensor {
        create_parent(path)?;
        save_tensor(&outcome.image, path).context("output.tensor")?;
    }
    if let Some(path) = &out.trace {
        create_parent(path)?;
        fs::write(path, outcome.trace.to_jsonl()).with_context(|| format!("output.trace: {}", path.display()))?;
    }
    let echo = serde_json::to_string_pretty(&outcome.config)?;
    fs::write(config_echo_path(&outcome.config), echo + "\n").context("writing config echo")?;
    let metrics = serde_json::to_string_pretty(&outcome.metrics)?;
    fs::write(metrics_path(&outcome.config), metrics + "\n").context("writing metrics")?;
    Ok(())
}

/// Resolves `config` against `base`, applies overrides, samples and writes outputs.
pub fn run(config: &RunConfig, base: &Path, overrides: &Overrides) -> Result<RunOutcome> {
    let mut resolved = config.resolve(base)?;
    if let Some(seed) = overrides.seed {
        resolved.sampler.seed = Some(seed);
    }
    if let Some(dir) = &overrides.out_dir {
        resolved.redirect_outputs(&std::path::absolute(dir)?);
    }
    let outcome = execute(&resolved)?;
    write_outputs(&outcome)?;
    Ok(outcome)
}

pub fn run_file(path: &Path, overrides: &Overrides) -> Result<RunOutcome> {
    let (config, base) = RunConfig::load(path)?;
    run(&config, &base, overrides)
}
