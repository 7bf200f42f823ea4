//! Brute-force ground truth over point-mass priors.

use crate::error::{Error, Result};
use crate::prior::log_sum_exp;
use crate::tensor::{ImageTensor, MaskTensor};

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorTable {
    pub points: Vec<ImageTensor>,
    /// Normalized log posterior weights.
    pub log_weights: Vec<f64>,
}

impl PosteriorTable {
    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|l| l.exp()).collect()
    }

    /// Index of the largest weight; lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &l) in self.log_weights.iter().enumerate() {
            if l > self.log_weights[best] {
                best = i;
            }
        }
        best
    }
}

/// Posterior over dataset points given `B ⊗ x0 = B ⊗ y0 + N(0, obs_sigma^2)`.
pub fn exact_masked_posterior(
    points: &[ImageTensor],
    prior_weights: &[f64],
    y0: &ImageTensor,
    mask: &MaskTensor,
    obs_sigma: f64,
) -> Result<PosteriorTable> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("posterior needs at least one point".into()));
    }
    if prior_weights.len() != points.len() {
        return Err(Error::InvalidArgument(format!(
            "{} prior weights for {} points",
            prior_weights.len(),
            points.len()
        )));
    }
    if obs_sigma.is_nan() || obs_sigma <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "obs_sigma {obs_sigma} must be positive"
        )));
    }
    mask.ensure_matches(y0.shape())?;
    let mut log_weights = Vec::with_capacity(points.len());
    for (p, w) in points.iter().zip(prior_weights) {
        p.ensure_shape(y0.shape())?;
        let d2: f64 = p
            .data()
            .iter()
            .zip(y0.data())
            .enumerate()
            .map(|(i, (a, b))| mask.at_flat(i) * (a - b) * (a - b))
            .sum();
        log_weights.push(w.ln() - d2 / (2.0 * obs_sigma * obs_sigma));
    }
    let lse = log_sum_exp(&log_weights);
    for l in &mut log_weights {
        *l -= lse;
    }
    Ok(PosteriorTable {
        points: points.to_vec(),
        log_weights,
    })
}

/// Index of the nearest point in L2; lowest index on ties.
pub fn nearest_point(sample: &ImageTensor, points: &[ImageTensor]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d = sample.squared_distance(p).unwrap_or(f64::INFINITY);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::probe_tensor;
    use crate::tensor::Shape;

    fn s() -> Shape {
        Shape::new(1, 2, 2)
    }

    #[test]
    fn symmetric_points_split_evenly() {
        let y = ImageTensor::zeros(s());
        let pts = vec![ImageTensor::filled(s(), 0.5), ImageTensor::filled(s(), -0.5)];
        let post = exact_masked_posterior(&pts, &[1.0, 1.0], &y, &MaskTensor::ones(2, 2), 0.7).unwrap();
        for w in post.weights() {
            assert!((w - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn concentrates_as_noise_vanishes() {
        let a = probe_tensor(s(), 1);
        let b = a.map(|v| v + 1.0);
        let post = exact_masked_posterior(&[a.clone(), b], &[0.5, 0.5], &a, &MaskTensor::ones(2, 2), 0.01).unwrap();
        assert!(post.weights()[0] > 1.0 - 1e-12);
        assert_eq!(post.argmax(), 0);
    }

    #[test]
    fn three_point_softmax() {
        // squared unmasked distances 0, 1, 2 with obs_sigma = 1
        let y = ImageTensor::zeros(Shape::new(1, 1, 2));
        let mk = |v: Vec<f64>| ImageTensor::from_vec(Shape::new(1, 1, 2), v).unwrap();
        let pts = vec![mk(vec![0.0, 9.0]), mk(vec![1.0, -4.0]), mk(vec![2f64.sqrt(), 0.0])];
        let mask = MaskTensor::new(1, 2, vec![1, 0]).unwrap();
        let post = exact_masked_posterior(&pts, &[1.0, 1.0, 1.0], &y, &mask, 1.0).unwrap();
        let raw = [1.0, (-0.5f64).exp(), (-1.0f64).exp()];
        let z: f64 = raw.iter().sum();
        for (w, r) in post.weights().iter().zip(raw) {
            assert!((w - r / z).abs() < 1e-12);
        }
        assert!((post.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn masked_constant_does_not_matter() {
        let shape = Shape::new(3, 4, 4);
        let mask = MaskTensor::from_fn(4, 4, |_, x| x < 2);
        let pts: Vec<_> = (0..3).map(|i| probe_tensor(shape, 10 + i)).collect();
        let y = probe_tensor(shape, 20);
        let base = exact_masked_posterior(&pts, &[0.2, 0.3, 0.5], &y, &mask, 0.5).unwrap();
        let shifted: Vec<_> = pts
            .iter()
            .map(|p| ImageTensor::from_fn(shape, |i| p.data()[i] + (1.0 - mask.at_flat(i)) * 3.0))
            .collect();
        let moved = exact_masked_posterior(&shifted, &[0.2, 0.3, 0.5], &y, &mask, 0.5).unwrap();
        for (a, b) in base.log_weights.iter().zip(&moved.log_weights) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn errors() {
        let y = ImageTensor::zeros(s());
        let m = MaskTensor::ones(2, 2);
        assert!(exact_masked_posterior(&[], &[], &y, &m, 1.0).is_err());
        assert!(exact_masked_posterior(std::slice::from_ref(&y), &[1.0], &y, &m, 0.0).is_err());
        assert!(exact_masked_posterior(std::slice::from_ref(&y), &[1.0, 2.0], &y, &m, 1.0).is_err());
    }

    #[test]
    fn nearest_point_rules() {
        let pts: Vec<_> = (0..3).map(|i| ImageTensor::filled(s(), i as f64)).collect();
        assert_eq!(nearest_point(&pts[2], &pts), 2);
        assert_eq!(nearest_point(&ImageTensor::filled(s(), 0.5), &pts), 0);
    }

    #[test]
    fn nearest_point_matches_linear_scan() {
        let shape = Shape::new(3, 4, 4);
        let pts: Vec<_> = (0..5).map(|i| probe_tensor(shape, 30 + i)).collect();
        for k in 0..20 {
            let x = probe_tensor(shape, 100 + k);
            let mut best = 0;
            let mut best_d = f64::MAX;
            for (i, p) in pts.iter().enumerate() {
                let mut d = 0.0;
                for j in 0..x.len() {
                    d += (x.data()[j] - p.data()[j]).powi(2);
                }
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            assert_eq!(nearest_point(&x, &pts), best);
        }
    }
}
