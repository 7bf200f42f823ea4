//! Builds the composite guidance and the metric references for a task.

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use pguide_core::prior::load_any;
use pguide_core::properties::{
    restorer_by_name, AvgPoolPyramid, ColorStatsProperty, GuidanceProperty, IdentityProperty, InpaintProperty,
    LightnessProperty, MeanSquareCritic, QualityProperty, RandomProjection, SmoothSemanticsProperty,
};
use pguide_core::tensor::{channel_stats, load_mask};
use pguide_core::{ChannelStats, CompositeGuidance, ImageTensor, MaskTensor, Shape};

use crate::config::{
    ColorTarget, TaskSpec, DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_FEATURE_DIM, DEFAULT_LAMBDA, DEFAULT_PYRAMID_LEVELS,
    DEFAULT_RESTORER,
};

/// Guidance plus the references the metrics compare against.
pub struct TaskSetup {
    pub guidance: CompositeGuidance,
    pub input: Option<ImageTensor>,
    pub mask: Option<MaskTensor>,
    pub color_target: Option<Vec<ChannelStats>>,
}

const IMAGE_EXTENSIONS: [&str; 4] = ["ppm", "pgm", "pnm", "pgt"];

/// Mean of per-image channel statistics over every image in `dir`.
pub fn directory_stats(dir: &Path) -> Result<Vec<ChannelStats>> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .with_context(|| dir.display().to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e))
        })
        .collect();
    paths.sort();
    ensure!(!paths.is_empty(), "no images in {}", dir.display());
    let mut sum: Vec<ChannelStats> = Vec::new();
    for p in &paths {
        let stats = channel_stats(&load_any(p)?);
        if sum.is_empty() {
            sum = vec![ChannelStats::new(0.0, 0.0); stats.len()];
        }
        ensure!(
            stats.len() == sum.len(),
            "{}: channel count differs from other references",
            p.display()
        );
        for (acc, s) in sum.iter_mut().zip(&stats) {
            acc.mean += s.mean;
            acc.std += s.std;
        }
    }
    let n = paths.len() as f64;
    Ok(sum
        .into_iter()
        .map(|s| ChannelStats::new(s.mean / n, s.std / n))
        .collect())
}

pub fn color_stats(color: &ColorTarget) -> Result<Vec<ChannelStats>> {
    let stats = match color {
        ColorTarget::Stats { means, stds } => means.iter().zip(stds).map(|(m, s)| ChannelStats::new(*m, *s)).collect(),
        ColorTarget::Reference { reference } => channel_stats(&load_any(reference)?),
        ColorTarget::ReferenceDir { reference_dir } => directory_stats(reference_dir)?,
    };
    Ok(stats)
}

fn input(path: &Path) -> Result<ImageTensor> {
    load_any(path).with_context(|| format!("task.input: {}", path.display()))
}

fn mask(path: &Path, shape: Shape) -> Result<MaskTensor> {
    let m = load_mask(path).with_context(|| format!("task.mask: {}", path.display()))?;
    m.ensure_matches(shape).context("task.mask")?;
    Ok(m)
}

/// A 1-channel input is broadcast to the prior's channel count.
fn matched_input(img: ImageTensor, shape: Shape) -> Result<ImageTensor> {
    if img.shape() == shape {
        return Ok(img);
    }
    if img.channels() == 1 && img.height() == shape.height && img.width() == shape.width {
        return Ok(img.replicate_channels(shape.channels)?);
    }
    bail!("task.input: shape {} does not match prior shape {shape}", img.shape())
}

type Terms = Vec<(Box<dyn GuidanceProperty>, f64)>;

fn semantics(restorer: &Option<String>, y0: &ImageTensor) -> Result<Box<dyn GuidanceProperty>> {
    let r = restorer_by_name(restorer.as_deref().unwrap_or(DEFAULT_RESTORER))?;
    Ok(Box::new(SmoothSemanticsProperty::new(r, y0.clone())?))
}

fn colorize_terms(y0: &ImageTensor, target: Vec<ChannelStats>, alpha: f64, gamma: f64) -> Result<Terms> {
    ensure!(
        target.len() == 3,
        "task.color: expected 3 channel stats, got {}",
        target.len()
    );
    Ok(vec![
        (
            Box::new(LightnessProperty::new(y0)?) as Box<dyn GuidanceProperty>,
            gamma,
        ),
        (Box::new(ColorStatsProperty::new(target)), gamma * alpha),
    ])
}

/// Loads the task inputs for a prior of `shape` and composes its guidance.
pub fn build(task: &TaskSpec, shape: Shape) -> Result<TaskSetup> {
    let mut setup = TaskSetup {
        guidance: CompositeGuidance::empty(),
        input: None,
        mask: None,
        color_target: None,
    };
    let terms: Terms = match task {
        TaskSpec::Sample => Vec::new(),
        TaskSpec::Inpaint {
            input: i,
            mask: m,
            weight,
        } => {
            let y0 = matched_input(input(i)?, shape)?;
            let m = mask(m, shape)?;
            setup.mask = Some(m.clone());
            setup.input = Some(y0.clone());
            vec![(
                Box::new(InpaintProperty::new(y0, m)?) as Box<dyn GuidanceProperty>,
                weight.unwrap_or(1.0),
            )]
        }
        TaskSpec::Colorize { input: i, color, alpha } => {
            let y0 = matched_input(input(i)?, shape)?;
            let target = color_stats(color)?;
            setup.color_target = Some(target.clone());
            setup.input = Some(y0.clone());
            colorize_terms(&y0, target, alpha.unwrap_or(DEFAULT_ALPHA), 1.0)?
        }
        TaskSpec::Restore { input: i, restorer } => {
            let y0 = matched_input(input(i)?, shape)?;
            setup.input = Some(y0.clone());
            vec![(semantics(restorer, &y0)?, 1.0)]
        }
        TaskSpec::RefRestore {
            input: i,
            reference,
            restorer,
            beta,
            feature_dim,
            feature_seed,
        } => {
            let y0 = matched_input(input(i)?, shape)?;
            let y_ref = matched_input(
                load_any(reference).with_context(|| format!("task.reference: {}", reference.display()))?,
                shape,
            )?;
            let extractor = RandomProjection::new(
                shape,
                feature_dim.unwrap_or(DEFAULT_FEATURE_DIM),
                feature_seed.unwrap_or(0),
            );
            let identity = IdentityProperty::new(Box::new(extractor), &y_ref, beta.unwrap_or(DEFAULT_BETA))
                .context("task.reference")?;
            setup.input = Some(y0.clone());
            vec![(semantics(restorer, &y0)?, 1.0), (Box::new(identity), 1.0)]
        }
        TaskSpec::Oldphoto {
            input: i,
            mask: m,
            color,
            restorer,
            alpha,
            gamma_color,
            gamma_inpaint,
        } => {
            let y0 = matched_input(input(i)?, shape)?;
            let m = mask(m, shape)?;
            let target = color_stats(color)?;
            let mut terms = vec![(semantics(restorer, &y0)?, 1.0)];
            terms.extend(colorize_terms(
                &y0,
                target.clone(),
                alpha.unwrap_or(DEFAULT_ALPHA),
                gamma_color.unwrap_or(1.0),
            )?);
            terms.push((
                Box::new(InpaintProperty::new(y0.clone(), m.clone())?),
                gamma_inpaint.unwrap_or(1.0),
            ));
            setup.mask = Some(m);
            setup.color_target = Some(target);
            setup.input = Some(y0);
            terms
        }
        TaskSpec::Quality {
            input: i,
            restorer,
            lambda_per,
            lambda_gan,
            levels,
        } => {
            let y0 = matched_input(input(i)?, shape)?;
            let pyramid = AvgPoolPyramid::new(shape, levels.unwrap_or(DEFAULT_PYRAMID_LEVELS));
            let quality = QualityProperty::new(
                Box::new(pyramid),
                Box::new(MeanSquareCritic),
                &y0,
                lambda_per.unwrap_or(DEFAULT_LAMBDA),
                lambda_gan.unwrap_or(DEFAULT_LAMBDA),
            )?;
            setup.input = Some(y0.clone());
            vec![(semantics(restorer, &y0)?, 1.0), (Box::new(quality), 1.0)]
        }
    };
    setup.guidance = CompositeGuidance::compose(terms).context("task")?;
    Ok(setup)
}
