//! Central finite-difference checks for guidance gradients.
//!
//! Only the loss value of a property is used here, never its gradient, so
//! these checks stay independent of the closed-form derivations they test.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::properties::GuidanceProperty;
use crate::tensor::{ImageTensor, Shape};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Uniform `[-1, 1)` tensor for probing at a reproducible random point.
pub fn probe_tensor(shape: Shape, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageTensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn finite_difference_gradient(
    x: &ImageTensor,
    step: f64,
    mut loss: impl FnMut(&ImageTensor) -> Result<f64>,
) -> Result<ImageTensor> {
    let mut grad = ImageTensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = loss(&probe)?;
        probe.data_mut()[i] = orig - step;
        let down = loss(&probe)?;
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * step);
    }
    Ok(grad)
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let diff = a.sub(b).map(|d| d.norm()).unwrap_or(f64::INFINITY);
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Relative error between a property's analytic gradient and central
/// differences of its loss at `x`.
pub fn relative_gradient_error(property: &dyn GuidanceProperty, x: &ImageTensor) -> Result<f64> {
    let analytic = property.evaluate(x)?.grad;
    let numeric = finite_difference_gradient(x, DEFAULT_STEP, |p| Ok(property.evaluate(p)?.loss))?;
    Ok(relative_error(&analytic, &numeric))
}
