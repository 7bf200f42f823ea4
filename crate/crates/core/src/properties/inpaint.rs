use super::{sum_sq_diff, Evaluation, GuidanceProperty};
use crate::error::Result;
use crate::tensor::{ImageTensor, MaskTensor, Shape};

/// `||B ⊗ x0_hat - B ⊗ y0||^2`.
#[derive(Debug, Clone)]
pub struct InpaintProperty {
    target: ImageTensor,
    mask: MaskTensor,
}

impl InpaintProperty {
    pub fn new(y0: ImageTensor, mask: MaskTensor) -> Result<Self> {
        mask.ensure_matches(y0.shape())?;
        Ok(Self { target: y0, mask })
    }

    pub fn mask(&self) -> &MaskTensor {
        &self.mask
    }
}

impl GuidanceProperty for InpaintProperty {
    fn name(&self) -> &str {
        "inpaint"
    }

    fn shape(&self) -> Option<Shape> {
        Some(self.target.shape())
    }

    fn evaluate(&self, x0: &ImageTensor) -> Result<Evaluation> {
        x0.ensure_shape(self.target.shape())?;
        let masked = self.mask.apply(x0)?;
        let target = self.mask.apply(&self.target)?;
        let loss = sum_sq_diff(masked.data(), target.data());
        let grad = masked.zip_map(&target, |a, b| 2.0 * (a - b))?;
        Ok(Evaluation { loss, grad })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;

    #[test]
    fn zero_at_target() {
        let y = ImageTensor::from_fn(Shape::new(3, 2, 2), |i| i as f64 / 6.0 - 1.0);
        let e = InpaintProperty::new(y.clone(), MaskTensor::ones(2, 2))
            .unwrap()
            .evaluate(&y)
            .unwrap();
        assert_eq!(e.loss, 0.0);
        assert!(e.grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn fully_masked_is_zero() {
        let y = ImageTensor::zeros(Shape::new(1, 3, 3));
        let p = InpaintProperty::new(y, MaskTensor::zeros(3, 3)).unwrap();
        let e = p.evaluate(&ImageTensor::filled(Shape::new(1, 3, 3), 0.8)).unwrap();
        assert_eq!(e.loss, 0.0);
        assert!(e.grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let shape = Shape::new(3, 4, 4);
        let mask = MaskTensor::from_fn(4, 4, |_, x| x < 2);
        for probe in 0..10 {
            let y = gradcheck::probe_tensor(shape, 100 + probe);
            let x = gradcheck::probe_tensor(shape, 200 + probe);
            let p = InpaintProperty::new(y, mask.clone()).unwrap();
            let err = gradcheck::relative_gradient_error(&p, &x).unwrap();
            assert!(err < 1e-4, "probe {probe}: {err}");
        }
    }

    #[test]
    fn shape_mismatch() {
        assert!(InpaintProperty::new(ImageTensor::zeros(Shape::new(1, 2, 2)), MaskTensor::ones(3, 2)).is_err());
        let p = InpaintProperty::new(ImageTensor::zeros(Shape::new(1, 2, 2)), MaskTensor::ones(2, 2)).unwrap();
        assert!(p.evaluate(&ImageTensor::zeros(Shape::new(3, 2, 2))).is_err());
    }
}
