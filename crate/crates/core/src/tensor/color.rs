use serde::{Deserialize, Serialize};

use super::{ImageTensor, Shape};
use crate::error::{Error, Result};

/// ITU-R BT.601 luma weights for (R, G, B).
pub const GRAY_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
}

impl ChannelStats {
    pub const fn new(mean: f64, std: f64) -> Self {
        Self { mean, std }
    }
}

/// Luma of a 3-channel image as a 1-channel image.
pub fn rgb2gray(img: &ImageTensor) -> Result<ImageTensor> {
    if img.channels() != 3 {
        return Err(Error::shape("3 channels", img.shape()));
    }
    let (r, g, b) = (img.channel(0), img.channel(1), img.channel(2));
    let shape = Shape::new(1, img.height(), img.width());
    Ok(ImageTensor::from_fn(shape, |i| {
        GRAY_WEIGHTS[0] * r[i] + GRAY_WEIGHTS[1] * g[i] + GRAY_WEIGHTS[2] * b[i]
    }))
}

/// Channels with a smaller relative spread are treated as constant.
const DEGENERATE_STD: f64 = 1e-12;

/// Per-channel spatial mean and population standard deviation.
pub fn channel_stats(img: &ImageTensor) -> Vec<ChannelStats> {
    (0..img.channels())
        .map(|c| {
            let values = img.channel(c);
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            ChannelStats::new(mean, var.sqrt())
        })
        .collect()
}

/// Renormalizes each channel to the target mean and standard deviation.
///
/// A constant source channel has no defined normalization; it maps to the
/// target mean.
pub fn adain(img: &ImageTensor, target: &[ChannelStats]) -> Result<ImageTensor> {
    if target.len() != img.channels() {
        return Err(Error::shape(
            format!("{} channel stats", img.channels()),
            format!("{} channel stats", target.len()),
        ));
    }
    let source = channel_stats(img);
    let mut out = img.clone();
    for (c, (src, tgt)) in source.iter().zip(target).enumerate() {
        let channel = out.channel_mut(c);
        if src.std > DEGENERATE_STD * src.mean.abs().max(1.0) {
            let gain = tgt.std / src.std;
            for v in channel.iter_mut() {
                *v = (*v - src.mean) * gain + tgt.mean;
            }
        } else {
            channel.fill(tgt.mean);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rgb(pixels: &[[f64; 3]]) -> ImageTensor {
        let n = pixels.len();
        let mut data = vec![0.0; 3 * n];
        for (i, p) in pixels.iter().enumerate() {
            for c in 0..3 {
                data[c * n + i] = p[c];
            }
        }
        ImageTensor::from_vec(Shape::new(3, 1, n), data).unwrap()
    }

    #[test]
    fn gray_of_equal_channels_is_identity() {
        for v in [-1.0, -0.3, 0.0, 0.7, 1.0] {
            let g = rgb2gray(&rgb(&[[v, v, v]])).unwrap();
            assert!((g.data()[0] - v).abs() < 1e-15);
        }
    }

    #[test]
    fn gray_of_pure_red() {
        let g = rgb2gray(&rgb(&[[1.0, -1.0, -1.0]])).unwrap();
        assert!((g.data()[0] - (-0.402)).abs() < 1e-12);
    }

    #[test]
    fn gray_of_replicated_gray_round_trips() {
        let gray = ImageTensor::from_fn(Shape::new(1, 3, 3), |i| (i as f64 * 0.37).sin());
        let back = rgb2gray(&gray.replicate_channels(3).unwrap()).unwrap();
        for (a, b) in back.data().iter().zip(gray.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gray_rejects_single_channel() {
        assert!(rgb2gray(&ImageTensor::zeros(Shape::new(1, 2, 2))).is_err());
    }

    #[test]
    fn stats_of_constant_and_two_point_channels() {
        let img = ImageTensor::from_vec(Shape::new(2, 1, 2), vec![0.4, 0.4, -1.0, 1.0]).unwrap();
        let stats = channel_stats(&img);
        assert_eq!(stats[0], ChannelStats::new(0.4, 0.0));
        assert_eq!(stats[1], ChannelStats::new(0.0, 1.0));
    }

    #[test]
    fn stats_match_two_pass_oracle() {
        let img = ImageTensor::from_fn(Shape::new(3, 5, 7), |i| ((i * 7919) % 101) as f64 / 50.0 - 1.0);
        let stats = channel_stats(&img);
        for (c, got) in stats.iter().enumerate() {
            let vals = img.channel(c);
            let mut sum = 0.0;
            for v in vals {
                sum += v;
            }
            let mean = sum / vals.len() as f64;
            let mut ss = 0.0;
            for v in vals {
                ss += (v - mean).powi(2);
            }
            let std = (ss / vals.len() as f64).sqrt();
            assert!((got.mean - mean).abs() < 1e-6);
            assert!((got.std - std).abs() < 1e-6);
        }
    }

    #[test]
    fn adain_affine_form() {
        let img = ImageTensor::from_vec(Shape::new(1, 1, 2), vec![-1.0, 1.0]).unwrap();
        let out = adain(&img, &[ChannelStats::new(0.5, 2.0)]).unwrap();
        assert_eq!(out.data(), &[-1.5, 2.5]);
    }

    #[test]
    fn adain_fixed_point() {
        let img = ImageTensor::from_fn(Shape::new(3, 4, 4), |i| (i as f64 * 0.731).cos());
        let out = adain(&img, &channel_stats(&img)).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn adain_constant_channel_takes_target_mean() {
        let img = ImageTensor::filled(Shape::new(1, 2, 2), 0.3);
        let out = adain(&img, &[ChannelStats::new(-0.2, 0.5)]).unwrap();
        assert!(out.data().iter().all(|&v| v == -0.2));
    }

    #[test]
    fn adain_rejects_wrong_stat_count() {
        let img = ImageTensor::zeros(Shape::new(3, 2, 2));
        assert!(adain(&img, &[ChannelStats::new(0.0, 1.0)]).is_err());
    }

    proptest! {
        #[test]
        fn adain_reproduces_target_stats(
            values in proptest::collection::vec(-1.0f64..1.0, 48),
            means in proptest::collection::vec(-1.0f64..1.0, 3),
            stds in proptest::collection::vec(0.0f64..1.5, 3),
        ) {
            let img = ImageTensor::from_vec(Shape::new(3, 4, 4), values).unwrap();
            let target: Vec<_> = means.iter().zip(&stds).map(|(&m, &s)| ChannelStats::new(m, s)).collect();
            let out = channel_stats(&adain(&img, &target).unwrap());
            for (got, want) in out.iter().zip(&target) {
                prop_assert!((got.mean - want.mean).abs() < 1e-5);
                prop_assert!((got.std - want.std).abs() < 1e-5);
            }
        }

        #[test]
        fn gray_is_linear(
            u in proptest::collection::vec(-1.0f64..1.0, 12),
            v in proptest::collection::vec(-1.0f64..1.0, 12),
            a in -2.0f64..2.0,
            b in -2.0f64..2.0,
        ) {
            let shape = Shape::new(3, 2, 2);
            let u = ImageTensor::from_vec(shape, u).unwrap();
            let v = ImageTensor::from_vec(shape, v).unwrap();
            let combo = u.scale(a).add(&v.scale(b)).unwrap();
            let lhs = rgb2gray(&combo).unwrap();
            let rhs = rgb2gray(&u).unwrap().scale(a).add(&rgb2gray(&v).unwrap().scale(b)).unwrap();
            for (x, y) in lhs.data().iter().zip(rhs.data()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
