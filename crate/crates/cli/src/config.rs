//! Run configuration: JSON schema, default resolution and validation.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use pguide_core::{MultiStepRange, PriorSpec, SamplerConfig, ScheduleSpec};
use serde::{Deserialize, Serialize};

pub const DEFAULT_RESTORER: &str = "box-blur-3";
pub const DEFAULT_ALPHA: f64 = 0.01;
pub const DEFAULT_BETA: f64 = 10.0;
pub const DEFAULT_LAMBDA: f64 = 1e-2;
pub const DEFAULT_PYRAMID_LEVELS: u32 = 2;
pub const DEFAULT_FEATURE_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub schedule: ScheduleSpec,
    pub prior: PriorSpec,
    pub task: TaskSpec,
    #[serde(default)]
    pub sampler: SamplerSection,
    pub output: OutputSpec,
}

/// Guidance task and its inputs. Unset weights take the documented defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TaskSpec {
    Sample,
    Inpaint {
        input: PathBuf,
        mask: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weight: Option<f64>,
    },
    Colorize {
        input: PathBuf,
        color: ColorTarget,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha: Option<f64>,
    },
    Restore {
        input: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        restorer: Option<String>,
    },
    RefRestore {
        input: PathBuf,
        reference: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        restorer: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        beta: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        feature_dim: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        feature_seed: Option<u64>,
    },
    Oldphoto {
        input: PathBuf,
        mask: PathBuf,
        color: ColorTarget,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        restorer: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gamma_color: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gamma_inpaint: Option<f64>,
    },
    Quality {
        input: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        restorer: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lambda_per: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lambda_gan: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        levels: Option<u32>,
    },
}

/// Target color statistics: inline, from one reference image, or averaged
/// over every image in a directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColorTarget {
    Stats { means: Vec<f64>, stds: Vec<f64> },
    Reference { reference: PathBuf },
    ReferenceDir { reference_dir: PathBuf },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamic_weight: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multi_steps: Option<Vec<MultiStepRange>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamp_x0: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tensor: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
}

impl TaskSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            TaskSpec::Sample => "sample",
            TaskSpec::Inpaint { .. } => "inpaint",
            TaskSpec::Colorize { .. } => "colorize",
            TaskSpec::Restore { .. } => "restore",
            TaskSpec::RefRestore { .. } => "ref-restore",
            TaskSpec::Oldphoto { .. } => "oldphoto",
            TaskSpec::Quality { .. } => "quality",
        }
    }

    /// Restoration-like tasks default to a constant scale with multi-step
    /// guidance; the others to a small dynamically weighted scale.
    pub fn is_restoration(&self) -> bool {
        matches!(
            self,
            TaskSpec::Restore { .. }
                | TaskSpec::RefRestore { .. }
                | TaskSpec::Oldphoto { .. }
                | TaskSpec::Quality { .. }
        )
    }
}

/// Default multi-step ranges for `T` steps: `N = 2` on `[0.5T, T]`, `N = 3` on `[0.7T, T]`.
pub fn default_multi_steps(num_steps: usize) -> Vec<MultiStepRange> {
    let at = |f: f64| ((f * num_steps as f64).round() as usize).clamp(1, num_steps);
    vec![
        MultiStepRange {
            steps: 2,
            start: at(0.5),
            end: num_steps,
        },
        MultiStepRange {
            steps: 3,
            start: at(0.7),
            end: num_steps,
        },
    ]
}

impl SamplerSection {
    fn resolve(&self, task: &TaskSpec, num_steps: usize) -> SamplerSection {
        let restoration = task.is_restoration();
        SamplerSection {
            scale: Some(self.scale.unwrap_or(if restoration { 0.1 } else { 0.01 })),
            dynamic_weight: Some(self.dynamic_weight.unwrap_or(!restoration)),
            multi_steps: Some(self.multi_steps.clone().unwrap_or_else(|| {
                if restoration {
                    default_multi_steps(num_steps)
                } else {
                    Vec::new()
                }
            })),
            seed: Some(self.seed.unwrap_or(0)),
            clamp_x0: Some(self.clamp_x0.unwrap_or(false)),
        }
    }

    /// Converts a resolved section; unset fields fall back to the non-restoration defaults.
    pub fn to_config(&self, num_steps: usize) -> SamplerConfig {
        let mut cfg = SamplerConfig::new(
            num_steps,
            self.scale.unwrap_or(0.01),
            self.dynamic_weight.unwrap_or(true),
            self.seed.unwrap_or(0),
        );
        cfg.multi_steps = self.multi_steps.clone().unwrap_or_default();
        cfg.clamp_x0 = self.clamp_x0.unwrap_or(false);
        cfg
    }
}

fn absolute(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

fn existing(field: &str, base: &Path, path: &Path) -> Result<PathBuf> {
    let p = absolute(base, path);
    ensure!(p.exists(), "{field}: file not found: {}", p.display());
    Ok(p)
}

fn finite(field: &str, value: f64) -> Result<f64> {
    ensure!(value.is_finite(), "{field}: weight must be finite, got {value}");
    Ok(value)
}

fn resolve_color(field: &str, base: &Path, color: &ColorTarget) -> Result<ColorTarget> {
    Ok(match color {
        ColorTarget::Stats { means, stds } => {
            ensure!(
                means.len() == 3 && stds.len() == 3,
                "{field}: expected 3 means and 3 stds, got {} and {}",
                means.len(),
                stds.len()
            );
            ensure!(
                means.iter().chain(stds).all(|v| v.is_finite()) && stds.iter().all(|s| *s >= 0.0),
                "{field}: stats must be finite with non-negative stds"
            );
            color.clone()
        }
        ColorTarget::Reference { reference } => ColorTarget::Reference {
            reference: existing(&format!("{field}.reference"), base, reference)?,
        },
        ColorTarget::ReferenceDir { reference_dir } => {
            let dir = existing(&format!("{field}.reference_dir"), base, reference_dir)?;
            ensure!(
                dir.is_dir(),
                "{field}.reference_dir: not a directory: {}",
                dir.display()
            );
            ColorTarget::ReferenceDir { reference_dir: dir }
        }
    })
}

fn resolve_restorer(field: &str, name: &Option<String>) -> Result<Option<String>> {
    let name = name.clone().unwrap_or_else(|| DEFAULT_RESTORER.to_owned());
    pguide_core::properties::restorer_by_name(&name).with_context(|| field.to_owned())?;
    Ok(Some(name))
}

impl TaskSpec {
    fn resolve(&self, base: &Path) -> Result<TaskSpec> {
        Ok(match self {
            TaskSpec::Sample => TaskSpec::Sample,
            TaskSpec::Inpaint { input, mask, weight } => TaskSpec::Inpaint {
                input: existing("task.input", base, input)?,
                mask: existing("task.mask", base, mask)?,
                weight: Some(finite("task.weight", weight.unwrap_or(1.0))?),
            },
            TaskSpec::Colorize { input, color, alpha } => TaskSpec::Colorize {
                input: existing("task.input", base, input)?,
                color: resolve_color("task.color", base, color)?,
                alpha: Some(finite("task.alpha", alpha.unwrap_or(DEFAULT_ALPHA))?),
            },
            TaskSpec::Restore { input, restorer } => TaskSpec::Restore {
                input: existing("task.input", base, input)?,
                restorer: resolve_restorer("task.restorer", restorer)?,
            },
            TaskSpec::RefRestore {
                input,
                reference,
                restorer,
                beta,
                feature_dim,
                feature_seed,
            } => {
                let dim = feature_dim.unwrap_or(DEFAULT_FEATURE_DIM);
                ensure!(dim > 0, "task.feature_dim: must be positive");
                TaskSpec::RefRestore {
                    input: existing("task.input", base, input)?,
                    reference: existing("task.reference", base, reference)?,
                    restorer: resolve_restorer("task.restorer", restorer)?,
                    beta: Some(finite("task.beta", beta.unwrap_or(DEFAULT_BETA))?),
                    feature_dim: Some(dim),
                    feature_seed: Some(feature_seed.unwrap_or(0)),
                }
            }
            TaskSpec::Oldphoto {
                input,
                mask,
                color,
                restorer,
                alpha,
                gamma_color,
                gamma_inpaint,
            } => TaskSpec::Oldphoto {
                input: existing("task.input", base, input)?,
                mask: existing("task.mask", base, mask)?,
                color: resolve_color("task.color", base, color)?,
                restorer: resolve_restorer("task.restorer", restorer)?,
                alpha: Some(finite("task.alpha", alpha.unwrap_or(DEFAULT_ALPHA))?),
                gamma_color: Some(finite("task.gamma_color", gamma_color.unwrap_or(1.0))?),
                gamma_inpaint: Some(finite("task.gamma_inpaint", gamma_inpaint.unwrap_or(1.0))?),
            },
            TaskSpec::Quality {
                input,
                restorer,
                lambda_per,
                lambda_gan,
                levels,
            } => {
                let levels = levels.unwrap_or(DEFAULT_PYRAMID_LEVELS);
                ensure!(levels > 0, "task.levels: must be positive");
                TaskSpec::Quality {
                    input: existing("task.input", base, input)?,
                    restorer: resolve_restorer("task.restorer", restorer)?,
                    lambda_per: Some(finite("task.lambda_per", lambda_per.unwrap_or(DEFAULT_LAMBDA))?),
                    lambda_gan: Some(finite("task.lambda_gan", lambda_gan.unwrap_or(DEFAULT_LAMBDA))?),
                    levels: Some(levels),
                }
            }
        })
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).context("parsing run config")
    }

    /// Reads a config file; the returned directory anchors its relative paths.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config = Self::from_json(&text).with_context(|| path.display().to_string())?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((config, base))
    }

    /// Expands every default, makes every path absolute and checks that
    /// referenced files exist. Resolving a resolved config is the identity.
    pub fn resolve(&self, base: &Path) -> Result<RunConfig> {
        let base = if base.as_os_str().is_empty() {
            std::env::current_dir().context("reading current directory")?
        } else {
            std::path::absolute(base).with_context(|| base.display().to_string())?
        };
        self.schedule.build().context("schedule")?;
        if self.prior.components.is_empty() {
            bail!("prior.components: at least one component is required");
        }
        let mut prior = self.prior.clone();
        for (i, c) in prior.components.iter_mut().enumerate() {
            c.mean_file = existing(&format!("prior.components[{i}].mean_file"), &base, &c.mean_file)?;
            finite(&format!("prior.components[{i}].weight"), c.weight)?;
            finite(&format!("prior.components[{i}].sigma"), c.sigma)?;
        }
        let task = self.task.resolve(&base)?;
        let sampler = self.sampler.resolve(&task, self.schedule.num_steps);
        let schedule = self.schedule.build().context("schedule")?;
        sampler
            .to_config(self.schedule.num_steps)
            .validate(&schedule)
            .context("sampler")?;
        let output = OutputSpec {
            image: absolute(&base, &self.output.image),
            tensor: self.output.tensor.as_ref().map(|p| absolute(&base, p)),
            trace: self.output.trace.as_ref().map(|p| absolute(&base, p)),
        };
        Ok(RunConfig {
            schedule: self.schedule,
            prior,
            task,
            sampler,
            output,
        })
    }

    /// Moves every output file into `dir`, keeping file names.
    pub fn redirect_outputs(&mut self, dir: &Path) {
        fn move_to(dir: &Path, p: &Path) -> PathBuf {
            dir.join(p.file_name().unwrap_or(p.as_os_str()))
        }
        self.output.image = move_to(dir, &self.output.image);
        self.output.tensor = self.output.tensor.as_deref().map(|p| move_to(dir, p));
        self.output.trace = self.output.trace.as_deref().map(|p| move_to(dir, p));
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        self.sampler.to_config(self.schedule.num_steps)
    }
}
