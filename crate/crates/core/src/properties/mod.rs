//! Partial guidance: each high-quality-image property is a loss on the
//! denoised estimate `x0_hat` together with its exact gradient.
//!
//! | task           | property         | target                 |
//! |----------------|------------------|------------------------|
//! | inpainting     | unmasked region  | `B ⊗ y0`               |
//! | colorization   | lightness        | `rgb2gray(y0)`         |
//! |                | color statistics | `sg(AdaIN(x0_hat, P))` |
//! | restoration    | smooth semantics | `restorer(y0, x_t, t)` |
//! | ref-based      | identity         | `features(y_ref)`      |
//! | quality        | perceptual + critic | `pyramid(y0)`       |
//!
//! Composite tasks sum weighted terms with [`CompositeGuidance`].

mod color;
mod identity;
mod inpaint;
mod quality;
mod semantics;

pub use color::{ColorStatsProperty, LightnessProperty};
pub use identity::{FeatureExtractor, IdentityProperty, RandomProjection};
pub use inpaint::InpaintProperty;
pub use quality::{AvgPoolPyramid, Critic, MeanSquareCritic, QualityProperty};
pub use semantics::{restorer_by_name, BoxBlur, IdentityRestorer, Restorer, SmoothSemanticsProperty};

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, Shape};

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub grad: ImageTensor,
}

pub trait GuidanceProperty: Send + Sync {
    fn name(&self) -> &str;

    /// Shape of `x0_hat` this property accepts, when it is fixed by the target.
    fn shape(&self) -> Option<Shape> {
        None
    }

    /// Hook for targets that depend on the current noisy state.
    fn refresh(&mut self, _x_t: &ImageTensor, _t: usize) -> Result<()> {
        Ok(())
    }

    fn evaluate(&self, x0: &ImageTensor) -> Result<Evaluation>;
}

pub struct Term {
    pub property: Box<dyn GuidanceProperty>,
    pub weight: f64,
}

/// Per-term losses alongside the weighted total.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeEvaluation {
    pub loss: f64,
    pub grad: ImageTensor,
    /// `(name, unweighted loss)` per term, in term order.
    pub terms: Vec<(String, f64)>,
}

#[derive(Default)]
pub struct CompositeGuidance {
    terms: Vec<Term>,
}

impl CompositeGuidance {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Weighted sum of properties. All fixed shapes must agree.
    pub fn compose(terms: Vec<(Box<dyn GuidanceProperty>, f64)>) -> Result<Self> {
        let mut shape: Option<Shape> = None;
        for (p, w) in &terms {
            if !w.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "weight {w} for `{}` is not finite",
                    p.name()
                )));
            }
            match (shape, p.shape()) {
                (Some(s), Some(q)) if s != q => return Err(Error::shape(s, q)),
                (None, q) => shape = q,
                _ => {}
            }
        }
        Ok(Self {
            terms: terms
                .into_iter()
                .map(|(property, weight)| Term { property, weight })
                .collect(),
        })
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn refresh(&mut self, x_t: &ImageTensor, t: usize) -> Result<()> {
        for term in &mut self.terms {
            term.property.refresh(x_t, t)?;
        }
        Ok(())
    }

    pub fn evaluate(&self, x0: &ImageTensor) -> Result<CompositeEvaluation> {
        let mut loss = 0.0;
        let mut grad = ImageTensor::zeros(x0.shape());
        let mut terms = Vec::with_capacity(self.terms.len());
        for term in &self.terms {
            let eval = term.property.evaluate(x0)?;
            loss += term.weight * eval.loss;
            grad.axpy(term.weight, &eval.grad)?;
            terms.push((term.property.name().to_owned(), eval.loss));
        }
        Ok(CompositeEvaluation { loss, grad, terms })
    }
}

impl std::fmt::Debug for CompositeGuidance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list()
            .entries(self.terms.iter().map(|t| (t.property.name(), t.weight)))
            .finish()
    }
}

fn sum_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::MaskTensor;

    fn shape() -> Shape {
        Shape::new(3, 4, 4)
    }

    fn img(seed: usize) -> ImageTensor {
        ImageTensor::from_fn(shape(), |i| (((i + 3) * (seed + 11) * 7919) % 997) as f64 / 498.5 - 1.0)
    }

    fn inpaint(seed: usize) -> Box<dyn GuidanceProperty> {
        let mask = MaskTensor::from_fn(4, 4, |y, x| !(y + x + seed).is_multiple_of(3));
        Box::new(InpaintProperty::new(img(seed), mask).unwrap())
    }

    #[test]
    fn single_unit_term_is_identity() {
        let x = img(1);
        let direct = inpaint(2).evaluate(&x).unwrap();
        let comp = CompositeGuidance::compose(vec![(inpaint(2), 1.0)])
            .unwrap()
            .evaluate(&x)
            .unwrap();
        assert_eq!(comp.loss, direct.loss);
        assert_eq!(comp.grad, direct.grad);
        assert_eq!(comp.terms, vec![("inpaint".to_owned(), direct.loss)]);
    }

    #[test]
    fn two_copies_add_weights() {
        let x = img(1);
        let one = inpaint(5).evaluate(&x).unwrap();
        let (a, b) = (0.75, 2.5);
        let comp = CompositeGuidance::compose(vec![(inpaint(5), a), (inpaint(5), b)])
            .unwrap()
            .evaluate(&x)
            .unwrap();
        assert!((comp.loss - (a + b) * one.loss).abs() < 1e-12 * comp.loss.abs());
        for (g, o) in comp.grad.data().iter().zip(one.grad.data()) {
            assert!((g - (a + b) * o).abs() < 1e-12);
        }
    }

    #[test]
    fn three_terms_match_hand_sum_bitwise() {
        let x = img(9);
        let props: Vec<Box<dyn GuidanceProperty>> = vec![
            Box::new(SmoothSemanticsProperty::new(Box::new(BoxBlur::new(3).unwrap()), img(4)).unwrap()),
            Box::new(ColorStatsProperty::new(crate::tensor::channel_stats(&img(6)))),
            inpaint(3),
        ];
        let weights = [1.0, 0.37, 2.2];
        let evals: Vec<_> = props.iter().map(|p| p.evaluate(&x).unwrap()).collect();
        let comp = CompositeGuidance::compose(props.into_iter().zip(weights).collect())
            .unwrap()
            .evaluate(&x)
            .unwrap();
        let mut loss = 0.0;
        for (e, w) in evals.iter().zip(weights) {
            loss += w * e.loss;
        }
        assert_eq!(comp.loss, loss);
        for i in 0..x.len() {
            let mut g = 0.0;
            for (e, w) in evals.iter().zip(weights) {
                g += w * e.grad.data()[i];
            }
            assert_eq!(comp.grad.data()[i], g);
        }
    }

    #[test]
    fn scaling_weights_scales_output() {
        let x = img(2);
        let build = |c: f64| {
            CompositeGuidance::compose(vec![(inpaint(1), 0.5 * c), (inpaint(7), 3.0 * c)])
                .unwrap()
                .evaluate(&x)
                .unwrap()
        };
        let (base, scaled) = (build(1.0), build(4.0));
        assert!((scaled.loss - 4.0 * base.loss).abs() < 1e-12 * scaled.loss);
        for (s, b) in scaled.grad.data().iter().zip(base.grad.data()) {
            assert!((s - 4.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_composite_has_zero_gradient() {
        let e = CompositeGuidance::empty().evaluate(&img(0)).unwrap();
        assert_eq!(e.loss, 0.0);
        assert!(e.grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let other =
            Box::new(InpaintProperty::new(ImageTensor::zeros(Shape::new(1, 4, 4)), MaskTensor::ones(4, 4)).unwrap());
        assert!(matches!(
            CompositeGuidance::compose(vec![(inpaint(0), 1.0), (other, 1.0)]),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(CompositeGuidance::compose(vec![(inpaint(0), f64::NAN)]).is_err());
    }

    #[test]
    fn evaluation_is_pure() {
        let comp = CompositeGuidance::compose(vec![(inpaint(1), 1.0), (inpaint(2), 0.5)]).unwrap();
        let x = img(3);
        assert_eq!(comp.evaluate(&x).unwrap(), comp.evaluate(&x).unwrap());
    }
}
