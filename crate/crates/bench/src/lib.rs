//! Benchmark fixtures shared by the criterion targets.

use std::sync::Arc;

use pguide_core::gradcheck::probe_tensor;
use pguide_core::properties::{GuidanceProperty, InpaintProperty};
use pguide_core::{CompositeGuidance, ImageTensor, MaskTensor, MixturePrior, NoiseSchedule, Shape};

pub struct Fixture {
    pub schedule: Arc<NoiseSchedule>,
    pub prior: MixturePrior,
    pub y0: ImageTensor,
    pub mask: MaskTensor,
    pub shape: Shape,
}

/// `points` delta components on a `3 x size x size` image with a half mask.
pub fn fixture(points: usize, size: usize, steps: usize) -> Fixture {
    let shape = Shape::new(3, size, size);
    let schedule = Arc::new(NoiseSchedule::linear(steps, 1e-4, 0.02).expect("valid schedule"));
    let means: Vec<ImageTensor> = (0..points as u64).map(|i| probe_tensor(shape, i).scale(0.5)).collect();
    let y0 = means[0].clone();
    let prior = MixturePrior::from_points(means, schedule.clone()).expect("valid prior");
    let mask = MaskTensor::from_fn(size, size, |_, x| x < size / 2);
    Fixture {
        schedule,
        prior,
        y0,
        mask,
        shape,
    }
}

impl Fixture {
    pub fn guidance(&self) -> CompositeGuidance {
        let p: Box<dyn GuidanceProperty> =
            Box::new(InpaintProperty::new(self.y0.clone(), self.mask.clone()).expect("matching mask"));
        CompositeGuidance::compose(vec![(p, 1.0)]).expect("finite weight")
    }
}
