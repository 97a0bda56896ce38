//! Smoothed mean-absolute-value EMG features.
//!
//! For `n` single-ended channels the feature vector holds the `n` channels
//! followed by every differential pair `(i, j)`, `i < j`, in lexicographic
//! order: 32 + 496 = 528 features for the standard sleeve. Each value is the
//! mean of `|x|` over the causal window `(T − 0.3 s, T]`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::session::EmgBlock;
use crate::{Error, Result};

/// Default MAV window length in seconds.
pub const MAV_WINDOW_S: f64 = 0.300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureChannel {
    Single(u16),
    Pair(u16, u16),
}

/// All `(i, j)` with `i < j < n`, lexicographic.
pub fn differential_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push((i, j));
        }
    }
    out
}

pub fn channel_map(n: usize) -> Vec<FeatureChannel> {
    (0..n)
        .map(|c| FeatureChannel::Single(c as u16))
        .chain(differential_pairs(n).into_iter().map(|(i, j)| FeatureChannel::Pair(i as u16, j as u16)))
        .collect()
}

/// Frames × features, row-major, on the kinematic frame grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub times: Vec<f64>,
    pub channel_map: Vec<FeatureChannel>,
    pub values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn n_frames(&self) -> usize {
        self.times.len()
    }

    pub fn n_features(&self) -> usize {
        self.channel_map.len()
    }

    #[inline]
    pub fn row(&self, frame: usize) -> &[f64] {
        let p = self.n_features();
        &self.values[frame * p..(frame + 1) * p]
    }

    #[inline]
    pub fn get(&self, frame: usize, feature: usize) -> f64 {
        self.values[frame * self.n_features() + feature]
    }

    pub fn column(&self, feature: usize) -> Vec<f64> {
        (0..self.n_frames()).map(|f| self.get(f, feature)).collect()
    }
}

/// Inclusive sample range `[lo, hi]` of the causal window ending at `t`.
fn window_bounds(t: f64, sample_rate: u32, window_samples: usize, n_samples: usize) -> Result<(usize, usize)> {
    let hi = libm::floor(t * f64::from(sample_rate) + 1e-6);
    if hi < 0.0 {
        return Err(Error::EmptyWindow("frame precedes the first EMG sample"));
    }
    let hi = hi as usize;
    if hi >= n_samples {
        return Err(Error::EmptyWindow("frame lies beyond the end of the EMG block"));
    }
    Ok((hi + 1 - window_samples.min(hi + 1), hi))
}

fn mav_from_prefix(prefix: &[f64], lo: usize, hi: usize) -> f64 {
    (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64
}

struct Column<'a> {
    values: &'a mut [f64],
    stride: usize,
    bounds: &'a [(usize, usize)],
    prefix: &'a mut [f64],
}

impl Column<'_> {
    fn fill(&mut self, feature: usize, rectified: impl Iterator<Item = f64>) {
        let mut acc = 0.0;
        for (s, x) in rectified.enumerate() {
            acc += x;
            self.prefix[s + 1] = acc;
        }
        for (f, &(lo, hi)) in self.bounds.iter().enumerate() {
            self.values[f * self.stride + feature] = mav_from_prefix(self.prefix, lo, hi);
        }
    }
}

/// Computes single-ended and differential-pair MAV features at each frame time.
pub fn extract_features(emg: &EmgBlock, frame_times: &[f64], window_s: f64) -> Result<FeatureMatrix> {
    emg.validate()?;
    let n_samples = emg.sample_count();
    let window_samples = libm::round(window_s * f64::from(emg.sample_rate)) as usize;
    if window_samples == 0 {
        return Err(Error::EmptyWindow("window shorter than one sample"));
    }
    let bounds = frame_times
        .iter()
        .map(|&t| window_bounds(t, emg.sample_rate, window_samples, n_samples))
        .collect::<Result<Vec<_>>>()?;

    let n = emg.channels;
    let map = channel_map(n);
    let p = map.len();
    let frames = frame_times.len();
    let mut values = vec![0.0; frames * p];

    let by_channel: Vec<Vec<f32>> = (0..n).map(|c| emg.channel(c).collect()).collect();
    let mut prefix = vec![0.0f64; n_samples + 1];
    let mut column = Column {
        values: &mut values,
        stride: p,
        bounds: &bounds,
        prefix: &mut prefix,
    };
    for (feature, ch) in map.iter().enumerate() {
        match *ch {
            FeatureChannel::Single(c) => {
                let x = &by_channel[c as usize];
                column.fill(feature, x.iter().map(|&v| f64::from(v).abs()));
            }
            FeatureChannel::Pair(i, j) => {
                let (a, b) = (&by_channel[i as usize], &by_channel[j as usize]);
                column.fill(feature, a.iter().zip(b).map(|(&u, &v)| (f64::from(u) - f64::from(v)).abs()));
            }
        }
    }

    Ok(FeatureMatrix {
        times: frame_times.to_vec(),
        channel_map: map,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::EMG_SAMPLE_RATE_HZ;

    fn block(channels: usize, samples: usize, f: impl Fn(usize, usize) -> f32) -> EmgBlock {
        let mut data = Vec::with_capacity(channels * samples);
        for s in 0..samples {
            for c in 0..channels {
                data.push(f(s, c));
            }
        }
        EmgBlock {
            sample_rate: EMG_SAMPLE_RATE_HZ,
            channels,
            samples: data,
        }
    }

    #[test]
    fn pair_examples() {
        assert_eq!(differential_pairs(32).len(), 496);
        assert!(differential_pairs(1).is_empty());
        let p5 = differential_pairs(5);
        assert_eq!(p5.len(), 10);
        assert_eq!(p5[0], (0, 1));
        assert_eq!(p5[9], (3, 4));
        assert_eq!(channel_map(32).len(), 528);
        assert_eq!(32 + 32 * 31 / 2, 528);
    }

    #[test]
    fn constant_channel_gives_its_value() {
        let emg = block(3, 2000, |_, c| if c == 0 { 2.0 } else { -1.0 });
        let times: Vec<f64> = (0..60).map(|i| i as f64 / 30.0).collect();
        let f = extract_features(&emg, &times, MAV_WINDOW_S).unwrap();
        assert_eq!(f.n_features(), 6);
        for frame in 0..60 {
            assert!((f.get(frame, 0) - 2.0).abs() < 1e-12);
            assert!((f.get(frame, 1) - 1.0).abs() < 1e-12);
            // (0,1) → |2 − (−1)| = 3; (1,2) identical channels → 0.
            assert!((f.get(frame, 3) - 3.0).abs() < 1e-12);
            assert_eq!(f.get(frame, 5), 0.0);
        }
    }

    #[test]
    fn identical_channels_cancel() {
        let emg = block(2, 1500, |s, _| libm::sinf(s as f32 * 0.1));
        let times: Vec<f64> = (0..40).map(|i| i as f64 / 30.0).collect();
        let f = extract_features(&emg, &times, MAV_WINDOW_S).unwrap();
        assert!(f.column(2).iter().all(|&v| v == 0.0));
        assert!(f.column(0).iter().skip(1).all(|&v| v > 0.0));
    }

    #[test]
    fn early_frames_use_truncated_windows() {
        let emg = block(1, 1000, |s, _| s as f32);
        let f = extract_features(&emg, &[0.0, 0.1, 0.5], MAV_WINDOW_S).unwrap();
        assert_eq!(f.get(0, 0), 0.0);
        assert!((f.get(1, 0) - 50.0).abs() < 1e-12); // mean of 0..=100
        assert!((f.get(2, 0) - 350.5).abs() < 1e-12); // mean of 201..=500
    }

    #[test]
    fn window_bounds_errors() {
        let emg = block(1, 100, |_, _| 1.0);
        assert!(matches!(extract_features(&emg, &[-0.01], MAV_WINDOW_S), Err(Error::EmptyWindow(_))));
        assert!(matches!(extract_features(&emg, &[0.2], MAV_WINDOW_S), Err(Error::EmptyWindow(_))));
        assert!(extract_features(&emg, &[0.05], 0.0).is_err());
    }
}
