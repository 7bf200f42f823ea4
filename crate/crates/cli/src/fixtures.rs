//! Built-in synthetic fixtures with analytically known answers.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Result;
use pguide_core::gradcheck::probe_tensor;
use pguide_core::prior::{ComponentSpec, PriorSpec};
use pguide_core::tensor::{rgb2gray, save_mask, save_tensor, GRAY_WEIGHTS};
use pguide_core::{ImageTensor, MaskTensor, ScheduleSpec, Shape};

use crate::config::{ColorTarget, OutputSpec, RunConfig, SamplerSection, TaskSpec};

/// Two equal-norm points that differ only inside the observed half.
pub struct InpaintFixture {
    pub shape: Shape,
    pub a: ImageTensor,
    pub b: ImageTensor,
    /// Observed where `x < width / 2`.
    pub mask: MaskTensor,
}

pub const INPAINT_STEPS: usize = 200;
pub const INPAINT_AMPLITUDE: f64 = 0.05;

/// `A = amp * sign(probe)`; `B` flips the sign of `A` on 3 of every 4
/// pixels in the observed half, so the points differ on 37.5% of pixels.
pub fn inpaint_fixture() -> InpaintFixture {
    let shape = Shape::new(3, 8, 8);
    let a = probe_tensor(shape, 1).map(|v| v.signum() * INPAINT_AMPLITUDE);
    let plane = shape.plane();
    let differs = |i: usize| {
        let p = i % plane;
        let (y, x) = (p / shape.width, p % shape.width);
        x < shape.width / 2 && (y + x) % 4 != 0
    };
    let b = ImageTensor::from_fn(shape, |i| if differs(i) { -a.data()[i] } else { a.data()[i] });
    let mask = MaskTensor::from_fn(shape.height, shape.width, |_, x| x < shape.width / 2);
    InpaintFixture { shape, a, b, mask }
}

/// Points with the same luma and different chroma; `targets[0]` supplies the color stats.
pub struct ColorFixture {
    pub shape: Shape,
    pub points: Vec<ImageTensor>,
    pub gray_input: ImageTensor,
}

pub fn color_fixture() -> ColorFixture {
    let shape = Shape::new(3, 16, 16);
    let plane = shape.plane();
    let luma = probe_tensor(Shape::new(1, 16, 16), 21).scale(0.3);
    let tex_a = probe_tensor(Shape::new(1, 16, 16), 22);
    let tex_b = probe_tensor(Shape::new(1, 16, 16), 23);
    let [wr, wg, wb] = GRAY_WEIGHTS;
    // u and v span the plane orthogonal to the luma weights.
    let u = {
        let n = (wb * wb + wr * wr).sqrt();
        [wb / n, 0.0, -wr / n]
    };
    let v = {
        let c = [wg * u[2], wb * u[0] - wr * u[2], -wg * u[0]];
        let n = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        [c[0] / n, c[1] / n, c[2] / n]
    };
    let make = |ca: &dyn Fn(usize) -> f64, cb: &dyn Fn(usize) -> f64| {
        ImageTensor::from_fn(shape, |i| {
            let (c, p) = (i / plane, i % plane);
            luma.data()[p] + ca(p) * u[c] + cb(p) * v[c]
        })
    };
    let points = vec![
        make(&|p| 0.25 + 0.1 * tex_a.data()[p], &|_| -0.1),
        make(&|_| -0.25, &|p| 0.15 + 0.1 * tex_b.data()[p]),
        make(&|p| 0.2 * tex_a.data()[p], &|_| 0.25),
    ];
    let gray_input = rgb2gray(&points[0])
        .expect("3 channels")
        .replicate_channels(3)
        .expect("1 channel");
    ColorFixture {
        shape,
        points,
        gray_input,
    }
}

pub const RESTORE_STEPS: usize = 100;

/// Gaussian prior around zero and a blurry-target restoration input.
pub fn restore_input() -> ImageTensor {
    probe_tensor(Shape::new(3, 16, 16), 31).scale(0.8)
}

fn output(dir: &Path, trace: bool) -> OutputSpec {
    OutputSpec {
        image: dir.join("out.ppm"),
        tensor: Some(dir.join("out.pgt")),
        trace: trace.then(|| dir.join("trace.jsonl")),
    }
}

fn write_config(dir: &Path, config: &RunConfig) -> Result<PathBuf> {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(config)? + "\n")?;
    Ok(path)
}

fn points_prior(dir: &Path, points: &[ImageTensor]) -> Result<PriorSpec> {
    let mut components = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let name = format!("point{i}.pgt");
        save_tensor(p, dir.join(&name))?;
        components.push(ComponentSpec {
            weight: 1.0,
            mean_file: name.into(),
            sigma: 0.0,
        });
    }
    Ok(PriorSpec { components })
}

fn schedule(num_steps: usize) -> ScheduleSpec {
    ScheduleSpec {
        num_steps,
        ..ScheduleSpec::default()
    }
}

/// Inpainting config over [`inpaint_fixture`]; `y0 = A`.
pub fn write_inpaint(dir: &Path) -> Result<PathBuf> {
    let f = inpaint_fixture();
    let prior = points_prior(dir, &[f.a.clone(), f.b])?;
    save_tensor(&f.a, dir.join("input.pgt"))?;
    save_mask(&f.mask, dir.join("mask.pgm"))?;
    let config = RunConfig {
        schedule: schedule(INPAINT_STEPS),
        prior,
        task: TaskSpec::Inpaint {
            input: "input.pgt".into(),
            mask: "mask.pgm".into(),
            weight: None,
        },
        sampler: SamplerSection::default(),
        output: output(Path::new("out"), true),
    };
    write_config(dir, &config)
}

/// Colorization config over [`color_fixture`]; stats from the first point.
pub fn write_colorize(dir: &Path) -> Result<PathBuf> {
    let f = color_fixture();
    let prior = points_prior(dir, &f.points)?;
    save_tensor(&f.gray_input, dir.join("input.pgt"))?;
    save_tensor(&f.points[0], dir.join("reference.pgt"))?;
    let config = RunConfig {
        schedule: ScheduleSpec::default(),
        prior,
        task: TaskSpec::Colorize {
            input: "input.pgt".into(),
            color: ColorTarget::Reference {
                reference: "reference.pgt".into(),
            },
            alpha: None,
        },
        sampler: SamplerSection::default(),
        output: output(Path::new("out"), true),
    };
    write_config(dir, &config)
}

/// Restoration config: Gaussian prior (sigma 0.5) and a `box-blur-3` target.
pub fn write_restore(dir: &Path) -> Result<PathBuf> {
    let input = restore_input();
    save_tensor(&ImageTensor::zeros(input.shape()), dir.join("mean.pgt"))?;
    save_tensor(&input, dir.join("input.pgt"))?;
    let config = RunConfig {
        schedule: schedule(RESTORE_STEPS),
        prior: PriorSpec {
            components: vec![ComponentSpec {
                weight: 1.0,
                mean_file: "mean.pgt".into(),
                sigma: 0.5,
            }],
        },
        task: TaskSpec::Restore {
            input: "input.pgt".into(),
            restorer: Some("box-blur-3".into()),
        },
        sampler: SamplerSection::default(),
        output: output(Path::new("out"), true),
    };
    write_config(dir, &config)
}
