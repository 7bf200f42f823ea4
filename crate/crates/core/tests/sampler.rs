use std::sync::Arc;

use pguide_core::properties::{GuidanceProperty, IdentityRestorer, InpaintProperty, SmoothSemanticsProperty};
use pguide_core::{
    dynamic_scale, gradcheck, sample, sample_unconditional, CompositeGuidance, Error, Evaluation, GuidedSampler,
    ImageTensor, MaskTensor, MixturePrior, NoiseSchedule, SamplerConfig, Shape,
};

fn shape() -> Shape {
    Shape::new(3, 4, 4)
}

fn schedule(t: usize) -> Arc<NoiseSchedule> {
    Arc::new(NoiseSchedule::linear(t, 1e-4, 0.02).unwrap())
}

fn two_points() -> (ImageTensor, ImageTensor) {
    let a = gradcheck::probe_tensor(shape(), 1).map(|v| v.signum() * 0.5);
    let b = a.map(|v| -v);
    (a, b)
}

fn inpaint(y: &ImageTensor, mask: MaskTensor) -> CompositeGuidance {
    let p: Box<dyn GuidanceProperty> = Box::new(InpaintProperty::new(y.clone(), mask).unwrap());
    CompositeGuidance::compose(vec![(p, 1.0)]).unwrap()
}

#[test]
fn dynamic_scale_examples() {
    let s = Shape::new(1, 1, 2);
    let x = ImageTensor::from_vec(s, vec![2.0, 0.0]).unwrap();
    let cand = ImageTensor::zeros(s);
    let g = ImageTensor::from_vec(s, vec![0.0, 4.0]).unwrap();
    assert!((dynamic_scale(&x, &cand, &g, 0.1).unwrap().unwrap() - 0.05).abs() < 1e-15);
    let g = x.sub(&cand).unwrap();
    assert!((dynamic_scale(&x, &cand, &g, 0.3).unwrap().unwrap() - 0.3).abs() < 1e-15);
    assert_eq!(dynamic_scale(&x, &cand, &ImageTensor::zeros(s), 0.1).unwrap(), None);
}

#[test]
fn dynamic_scale_norm_identity() {
    for seed in 0..20 {
        let x = gradcheck::probe_tensor(shape(), seed);
        let c = gradcheck::probe_tensor(shape(), seed + 100);
        let g = gradcheck::probe_tensor(shape(), seed + 200).scale(7.0);
        let s = dynamic_scale(&x, &c, &g, 0.01).unwrap().unwrap();
        let lhs = g.scale(s).norm();
        let rhs = 0.01 * x.sub(&c).unwrap().norm();
        assert!(((lhs - rhs) / rhs).abs() < 1e-6);
    }
}

#[test]
fn same_seed_is_bitwise_deterministic() {
    let sched = schedule(50);
    let (a, b) = two_points();
    let prior = MixturePrior::from_points(vec![a.clone(), b], sched.clone()).unwrap();
    let cfg = SamplerConfig::new(50, 0.01, true, 9).with_multi_step(2, 20, 40);
    let mask = MaskTensor::from_fn(4, 4, |_, x| x < 2);
    let (x1, t1) = sample(&sched, &prior, &mut inpaint(&a, mask.clone()), &cfg, shape()).unwrap();
    let (x2, t2) = sample(&sched, &prior, &mut inpaint(&a, mask), &cfg, shape()).unwrap();
    assert_eq!(x1, x2);
    assert_eq!(t1.to_jsonl(), t2.to_jsonl());
    assert!(!t1.entries.is_empty());
}

#[test]
fn empty_guidance_matches_unconditional_sampler() {
    let sched = schedule(60);
    let prior = MixturePrior::gaussian(gradcheck::probe_tensor(shape(), 3), 0.7, sched.clone()).unwrap();
    for seed in [0, 1, 77] {
        let cfg = SamplerConfig::new(60, 0.1, false, seed);
        let (guided, trace) = sample(&sched, &prior, &mut CompositeGuidance::empty(), &cfg, shape()).unwrap();
        let plain = sample_unconditional(&sched, &prior, seed, shape()).unwrap();
        assert_eq!(guided, plain);
        assert!(trace.entries.is_empty());
    }
}

#[test]
fn zero_gradient_guidance_matches_unguided_run() {
    let sched = schedule(60);
    let (a, b) = two_points();
    let prior = MixturePrior::from_points(vec![a.clone(), b], sched.clone()).unwrap();
    for dynamic in [true, false] {
        let cfg = SamplerConfig::new(60, 0.01, dynamic, 5);
        let (masked, _) = sample(&sched, &prior, &mut inpaint(&a, MaskTensor::zeros(4, 4)), &cfg, shape()).unwrap();
        let (free, _) = sample(&sched, &prior, &mut CompositeGuidance::empty(), &cfg, shape()).unwrap();
        assert_eq!(masked, free);
    }
}

#[test]
fn inactive_multi_step_range_changes_nothing() {
    let sched = schedule(40);
    let (a, b) = two_points();
    let prior = MixturePrior::from_points(vec![a.clone(), b], sched.clone()).unwrap();
    let mask = MaskTensor::from_fn(4, 4, |y, _| y < 2);
    let single = SamplerConfig::new(40, 0.01, true, 3);
    // N = 1 inside an active range is the repeat-zero-times path
    let n1_active = single.clone().with_multi_step(1, 1, 40);
    let (x1, t1) = sample(&sched, &prior, &mut inpaint(&a, mask.clone()), &single, shape()).unwrap();
    let (x2, t2) = sample(&sched, &prior, &mut inpaint(&a, mask.clone()), &n1_active, shape()).unwrap();
    assert_eq!(x1, x2);
    assert_eq!(t1, t2);
    // a range whose N never exceeds one step elsewhere
    let sched_big = schedule(40);
    let n3_range = single.with_multi_step(3, 40, 40);
    let (x3, t3) = sample(&sched_big, &prior, &mut inpaint(&a, mask), &n3_range, shape()).unwrap();
    assert_ne!(x1, x3);
    assert_eq!(t3.entries.iter().filter(|e| e.t == 40).count(), 3);
}

#[test]
fn trace_obeys_dynamic_weight_identity() {
    let sched = schedule(80);
    let (a, b) = two_points();
    let prior = MixturePrior::from_points(vec![a.clone(), b], sched.clone()).unwrap();
    let cfg = SamplerConfig::new(80, 0.01, true, 11).with_multi_step(2, 40, 80);
    let (_, trace) = sample(
        &sched,
        &prior,
        &mut inpaint(&a, MaskTensor::from_fn(4, 4, |_, x| x % 2 == 0)),
        &cfg,
        shape(),
    )
    .unwrap();
    assert!(trace.entries.len() > 80);
    for e in &trace.entries {
        let lhs = e.scale * e.grad_norm;
        let rhs = 0.01 * e.step_norm;
        assert!(((lhs - rhs) / rhs).abs() < 1e-6, "t={} k={}", e.t, e.k);
        assert!(e.loss.contains_key("inpaint"));
    }
    let first = trace.to_jsonl().lines().next().unwrap().to_owned();
    let v: serde_json::Value = serde_json::from_str(&first).unwrap();
    for key in ["t", "k", "loss", "scale", "grad_norm"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn single_point_prior_collapses_onto_point() {
    let sched = schedule(1000);
    let p = gradcheck::probe_tensor(shape(), 8);
    let prior = MixturePrior::from_points(vec![p.clone()], sched.clone()).unwrap();
    let x = sample_unconditional(&sched, &prior, 2, shape()).unwrap();
    let dist = x.sub(&p).unwrap().norm();
    assert!(dist < 0.05 * (shape().len() as f64).sqrt(), "{dist}");
}

#[test]
fn restoration_guidance_pulls_toward_target() {
    let sched = schedule(100);
    let prior = MixturePrior::gaussian(ImageTensor::zeros(shape()), 1.0, sched.clone()).unwrap();
    let y = gradcheck::probe_tensor(shape(), 4);
    let mut total = [0.0; 2];
    for seed in 0..10 {
        for (i, s) in [0.0, 1.0].into_iter().enumerate() {
            let cfg = SamplerConfig::new(100, s, false, seed);
            let p: Box<dyn GuidanceProperty> =
                Box::new(SmoothSemanticsProperty::new(Box::new(IdentityRestorer), y.clone()).unwrap());
            let mut g = CompositeGuidance::compose(vec![(p, 1.0)]).unwrap();
            let (x, _) = sample(&sched, &prior, &mut g, &cfg, shape()).unwrap();
            total[i] += x.squared_distance(&y).unwrap();
        }
    }
    assert!(total[1] < total[0], "{total:?}");
}

struct Exploding;

impl GuidanceProperty for Exploding {
    fn name(&self) -> &str {
        "exploding"
    }

    fn evaluate(&self, x0: &ImageTensor) -> pguide_core::Result<Evaluation> {
        Ok(Evaluation {
            loss: f64::INFINITY,
            grad: ImageTensor::zeros(x0.shape()),
        })
    }
}

#[test]
fn non_finite_guidance_aborts_with_context() {
    let sched = schedule(10);
    let prior = MixturePrior::gaussian(ImageTensor::zeros(shape()), 1.0, sched.clone()).unwrap();
    let mut g = CompositeGuidance::compose(vec![(Box::new(Exploding) as Box<dyn GuidanceProperty>, 1.0)]).unwrap();
    let err = sample(&sched, &prior, &mut g, &SamplerConfig::new(10, 0.1, false, 0), shape()).unwrap_err();
    match err {
        Error::NonFiniteGuidance { property, t, .. } => {
            assert_eq!(property, "exploding");
            assert_eq!(t, 10);
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn config_validation() {
    let sched = schedule(10);
    let prior = MixturePrior::gaussian(ImageTensor::zeros(shape()), 1.0, sched.clone()).unwrap();
    let bad = [
        SamplerConfig::new(11, 0.1, false, 0),
        SamplerConfig::new(10, -1.0, false, 0),
        SamplerConfig::new(10, 0.1, false, 0).with_multi_step(0, 1, 5),
        SamplerConfig::new(10, 0.1, false, 0).with_multi_step(2, 6, 5),
        SamplerConfig::new(10, 0.1, false, 0).with_multi_step(2, 5, 11),
    ];
    for cfg in &bad {
        assert!(
            matches!(GuidedSampler::new(&sched, &prior, cfg), Err(Error::InvalidConfig(_))),
            "{cfg:?}"
        );
    }
}

#[test]
fn larger_range_wins_on_overlap() {
    let cfg = SamplerConfig::new(100, 0.1, false, 0)
        .with_multi_step(2, 50, 100)
        .with_multi_step(3, 70, 100);
    assert_eq!(cfg.steps_at(49), 1);
    assert_eq!(cfg.steps_at(50), 2);
    assert_eq!(cfg.steps_at(69), 2);
    assert_eq!(cfg.steps_at(70), 3);
    assert_eq!(cfg.steps_at(100), 3);
}
