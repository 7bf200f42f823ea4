use super::{sum_sq_diff, Evaluation, GuidanceProperty};
use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, Shape};

/// Produces the smooth-semantics target `f(y0, x_t, t)`.
pub trait Restorer: Send + Sync {
    fn name(&self) -> String;

    /// `t = 0` is passed when no sampling step is in progress.
    fn restore(&self, y0: &ImageTensor, x_t: &ImageTensor, t: usize) -> Result<ImageTensor>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityRestorer;

impl Restorer for IdentityRestorer {
    fn name(&self) -> String {
        "identity".into()
    }

    fn restore(&self, y0: &ImageTensor, _x_t: &ImageTensor, _t: usize) -> Result<ImageTensor> {
        Ok(y0.clone())
    }
}

/// `k x k` mean filter with reflection padding (edge pixel not repeated).
#[derive(Debug, Clone, Copy)]
pub struct BoxBlur {
    size: usize,
}

impl BoxBlur {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 || size.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("box blur size {size} must be odd")));
        }
        Ok(Self { size })
    }

    pub fn blur(&self, img: &ImageTensor) -> ImageTensor {
        let Shape {
            channels,
            height,
            width,
        } = img.shape();
        let r = (self.size / 2) as isize;
        let norm = 1.0 / (self.size * self.size) as f64;
        let mut out = ImageTensor::zeros(img.shape());
        for c in 0..channels {
            let src = img.channel(c);
            let dst = out.channel_mut(c);
            for y in 0..height {
                for x in 0..width {
                    let mut acc = 0.0;
                    for dy in -r..=r {
                        let sy = reflect(y as isize + dy, height);
                        for dx in -r..=r {
                            acc += src[sy * width + reflect(x as isize + dx, width)];
                        }
                    }
                    dst[y * width + x] = acc * norm;
                }
            }
        }
        out
    }
}

fn reflect(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    while i < 0 || i >= n {
        i = if i < 0 { -i } else { 2 * (n - 1) - i };
    }
    i as usize
}

impl Restorer for BoxBlur {
    fn name(&self) -> String {
        format!("box-blur-{}", self.size)
    }

    fn restore(&self, y0: &ImageTensor, _x_t: &ImageTensor, _t: usize) -> Result<ImageTensor> {
        Ok(self.blur(y0))
    }
}

/// Built-in restorers: `identity` and `box-blur-<k>` for odd `k`.
pub fn restorer_by_name(name: &str) -> Result<Box<dyn Restorer>> {
    if name == "identity" {
        return Ok(Box::new(IdentityRestorer));
    }
    if let Some(k) = name.strip_prefix("box-blur-").and_then(|k| k.parse().ok()) {
        return Ok(Box::new(BoxBlur::new(k)?));
    }
    Err(Error::InvalidArgument(format!(
        "unknown restorer `{name}` (expected `identity` or `box-blur-<k>`)"
    )))
}

/// `||x0_hat - f(y0, x_t, t)||^2`, with the target refreshed every step.
pub struct SmoothSemanticsProperty {
    restorer: Box<dyn Restorer>,
    y0: ImageTensor,
    target: ImageTensor,
}

impl SmoothSemanticsProperty {
    pub fn new(restorer: Box<dyn Restorer>, y0: ImageTensor) -> Result<Self> {
        let target = restorer.restore(&y0, &y0, 0)?;
        target.ensure_shape(y0.shape())?;
        Ok(Self { restorer, y0, target })
    }

    pub fn target(&self) -> &ImageTensor {
        &self.target
    }
}

impl GuidanceProperty for SmoothSemanticsProperty {
    fn name(&self) -> &str {
        "smooth_semantics"
    }

    fn shape(&self) -> Option<Shape> {
        Some(self.y0.shape())
    }

    fn refresh(&mut self, x_t: &ImageTensor, t: usize) -> Result<()> {
        let target = self.restorer.restore(&self.y0, x_t, t)?;
        target.ensure_shape(self.y0.shape())?;
        self.target = target;
        Ok(())
    }

    fn evaluate(&self, x0: &ImageTensor) -> Result<Evaluation> {
        x0.ensure_shape(self.target.shape())?;
        let loss = sum_sq_diff(x0.data(), self.target.data());
        let grad = x0.zip_map(&self.target, |x, z| 2.0 * (x - z))?;
        Ok(Evaluation { loss, grad })
    }
}
