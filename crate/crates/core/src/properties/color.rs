use super::{sum_sq_diff, Evaluation, GuidanceProperty};
use crate::error::{Error, Result};
use crate::tensor::{adain, rgb2gray, ChannelStats, ImageTensor, GRAY_WEIGHTS};

/// `||rgb2gray(x0_hat) - rgb2gray(y0)||^2`.
#[derive(Debug, Clone)]
pub struct LightnessProperty {
    target_gray: ImageTensor,
}

impl LightnessProperty {
    /// A 3-channel `y0` is converted to gray; a 1-channel `y0` is already the target.
    pub fn new(y0: &ImageTensor) -> Result<Self> {
        let target_gray = match y0.channels() {
            1 => y0.clone(),
            3 => rgb2gray(y0)?,
            _ => return Err(Error::shape("1 or 3 channels", y0.shape())),
        };
        Ok(Self { target_gray })
    }

    pub fn target(&self) -> &ImageTensor {
        &self.target_gray
    }
}

impl GuidanceProperty for LightnessProperty {
    fn name(&self) -> &str {
        "lightness"
    }

    fn evaluate(&self, x0: &ImageTensor) -> Result<Evaluation> {
        let gray = rgb2gray(x0)?;
        gray.ensure_shape(self.target_gray.shape())?;
        let residual = gray.sub(&self.target_gray)?;
        let loss = residual.sum_squares();
        let mut grad = ImageTensor::zeros(x0.shape());
        for (c, w) in GRAY_WEIGHTS.iter().enumerate() {
            for (g, r) in grad.channel_mut(c).iter_mut().zip(residual.data()) {
                *g = 2.0 * w * r;
            }
        }
        Ok(Evaluation { loss, grad })
    }
}

/// `||x0_hat - sg(AdaIN(x0_hat, P))||^2`.
///
/// The AdaIN output is held constant when differentiating, so the gradient
/// is `2 (x0_hat - AdaIN(x0_hat, P))` and not the derivative of the loss
/// through the normalization.
#[derive(Debug, Clone)]
pub struct ColorStatsProperty {
    target: Vec<ChannelStats>,
}

impl ColorStatsProperty {
    pub fn new(target: Vec<ChannelStats>) -> Self {
        Self { target }
    }

    pub fn target(&self) -> &[ChannelStats] {
        &self.target
    }
}

impl GuidanceProperty for ColorStatsProperty {
    fn name(&self) -> &str {
        "color_stats"
    }

    fn evaluate(&self, x0: &ImageTensor) -> Result<Evaluation> {
        let normalized = adain(x0, &self.target)?;
        let loss = sum_sq_diff(x0.data(), normalized.data());
        let grad = x0.zip_map(&normalized, |x, a| 2.0 * (x - a))?;
        Ok(Evaluation { loss, grad })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use crate::tensor::{channel_stats, Shape};

    fn shape() -> Shape {
        Shape::new(3, 4, 4)
    }

    #[test]
    fn lightness_zero_at_target() {
        let y = gradcheck::probe_tensor(shape(), 1);
        let e = LightnessProperty::new(&y).unwrap().evaluate(&y).unwrap();
        assert_eq!(e.loss, 0.0);
    }

    #[test]
    fn lightness_ignores_luma_preserving_recoloring() {
        let y = gradcheck::probe_tensor(shape(), 2);
        // (w_b, 0, -w_r) is orthogonal to the luma weights.
        let [wr, _, wb] = GRAY_WEIGHTS;
        let mut x = y.clone();
        for (i, amount) in [0.3, -0.2, 0.5, 0.1].iter().cycle().take(16).enumerate() {
            x.channel_mut(0)[i] += amount * wb;
            x.channel_mut(2)[i] -= amount * wr;
        }
        let e = LightnessProperty::new(&y).unwrap().evaluate(&x).unwrap();
        assert!(e.loss < 1e-10, "{}", e.loss);
        assert!(x.sub(&y).unwrap().norm() > 0.1);
    }

    #[test]
    fn lightness_accepts_gray_target() {
        let y = gradcheck::probe_tensor(shape(), 3);
        let a = LightnessProperty::new(&y).unwrap();
        let b = LightnessProperty::new(&rgb2gray(&y).unwrap()).unwrap();
        let x = gradcheck::probe_tensor(shape(), 4);
        assert_eq!(a.evaluate(&x).unwrap(), b.evaluate(&x).unwrap());
        assert!(LightnessProperty::new(&ImageTensor::zeros(Shape::new(2, 4, 4))).is_err());
        assert!(a.evaluate(&ImageTensor::zeros(Shape::new(1, 4, 4))).is_err());
    }

    #[test]
    fn lightness_gradient_matches_finite_differences() {
        for probe in 0..10 {
            let p = LightnessProperty::new(&gradcheck::probe_tensor(shape(), 10 + probe)).unwrap();
            let x = gradcheck::probe_tensor(shape(), 50 + probe);
            let err = gradcheck::relative_gradient_error(&p, &x).unwrap();
            assert!(err < 1e-4, "probe {probe}: {err}");
        }
    }

    #[test]
    fn color_stats_zero_at_target_stats() {
        let x = gradcheck::probe_tensor(shape(), 5);
        let e = ColorStatsProperty::new(channel_stats(&x)).evaluate(&x).unwrap();
        assert!(e.loss < 1e-20);
        assert!(e.grad.data().iter().all(|g| g.abs() < 1e-10));
    }

    #[test]
    fn color_stats_constant_channel() {
        let x = ImageTensor::filled(Shape::new(1, 3, 3), 0.4);
        let e = ColorStatsProperty::new(vec![ChannelStats::new(-0.1, 0.3)])
            .evaluate(&x)
            .unwrap();
        assert!(e.grad.data().iter().all(|&g| (g - 2.0 * (0.4 - -0.1)).abs() < 1e-12));
    }

    #[test]
    fn color_stats_gradient_is_stop_gradient_formula() {
        let target = vec![
            ChannelStats::new(0.2, 0.4),
            ChannelStats::new(-0.1, 0.2),
            ChannelStats::new(0.0, 0.6),
        ];
        let p = ColorStatsProperty::new(target.clone());
        for probe in 0..10 {
            let x = gradcheck::probe_tensor(shape(), 70 + probe);
            let e = p.evaluate(&x).unwrap();
            // recompute AdaIN directly
            let stats = channel_stats(&x);
            for c in 0..3 {
                for (i, &v) in x.channel(c).iter().enumerate() {
                    let a = (v - stats[c].mean) / stats[c].std * target[c].std + target[c].mean;
                    assert!((e.grad.channel(c)[i] - 2.0 * (v - a)).abs() < 1e-12);
                }
            }
            // x - AdaIN(x) lies in span{1, z}, which the transposed AdaIN
            // Jacobian annihilates, so the full-chain derivative agrees.
            let fd = gradcheck::finite_difference_gradient(&x, 1e-5, |q| Ok(p.evaluate(q)?.loss)).unwrap();
            assert!(gradcheck::relative_error(&e.grad, &fd) < 1e-4);
        }
    }

    #[test]
    fn color_stats_length_mismatch() {
        let p = ColorStatsProperty::new(vec![ChannelStats::new(0.0, 1.0)]);
        assert!(p.evaluate(&ImageTensor::zeros(shape())).is_err());
    }
}
