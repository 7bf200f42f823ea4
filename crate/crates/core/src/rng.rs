//! Seeded, splittable noise source.
//!
//! Every draw is addressed by `(run seed, timestep t, inner iteration k,
//! draw index)`. The run seed keys a ChaCha8 generator and the remaining
//! coordinates select its 64-bit stream id, so any draw can be regenerated
//! independently of what was drawn before it. Normals come from
//! `rand_distr::StandardNormal`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::{ImageTensor, Shape};

/// Draw index reserved for the initial `x_T`.
const INIT_STEP: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomStream {
    seed: u64,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn stream_id(t: u64, k: u64, draw: u64) -> u64 {
        debug_assert!(t < 1 << 40 && k < 1 << 16 && draw < 1 << 8);
        (t << 24) | (k << 8) | draw
    }

    /// A generator positioned at the start of sub-stream `(t, k, draw)`.
    pub fn substream(&self, t: usize, k: usize, draw: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(Self::stream_id(t as u64, k as u64, draw as u64));
        rng
    }

    pub fn normal_tensor(&self, shape: Shape, t: usize, k: usize, draw: usize) -> ImageTensor {
        let mut rng = self.substream(t, k, draw);
        ImageTensor::from_fn(shape, |_| rng.sample(StandardNormal))
    }

    /// Standard-normal `x_T`.
    pub fn initial(&self, shape: Shape) -> ImageTensor {
        self.normal_tensor(shape, INIT_STEP as usize, 0, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_address_same_draws() {
        let s = RandomStream::new(7);
        let shape = Shape::new(1, 3, 3);
        assert_eq!(s.normal_tensor(shape, 5, 1, 0), s.normal_tensor(shape, 5, 1, 0));
        assert_eq!(s.initial(shape), RandomStream::new(7).initial(shape));
    }

    #[test]
    fn distinct_addresses_differ() {
        let s = RandomStream::new(7);
        let shape = Shape::new(1, 2, 2);
        let base = s.normal_tensor(shape, 5, 0, 0);
        assert_ne!(base, s.normal_tensor(shape, 6, 0, 0));
        assert_ne!(base, s.normal_tensor(shape, 5, 1, 0));
        assert_ne!(base, s.normal_tensor(shape, 5, 0, 1));
        assert_ne!(base, RandomStream::new(8).normal_tensor(shape, 5, 0, 0));
    }

    #[test]
    fn draws_look_standard_normal() {
        let t = RandomStream::new(1).normal_tensor(Shape::new(1, 100, 100), 3, 0, 0);
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.04, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
