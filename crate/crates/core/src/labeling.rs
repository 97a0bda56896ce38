//! Mimicked and mirrored training sets.
//!
//! Mimicked labels are the virtual hand shifted by a single session-wide lag
//! found by cross-correlation against the EMG features; mirrored labels are
//! the contralateral hand as recorded. Both use the same per-movement
//! 50/50 trial split.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::features::FeatureMatrix;
use crate::kinematics::KinematicStream;
use crate::rng::{self, Purpose};
use crate::session::{SessionDataset, TrialRecord};
use crate::{Error, Result, NUM_DOFS};

/// Default lag search half-width: ±0.5 s at 30 Hz.
pub const DEFAULT_MAX_LAG_FRAMES: u32 = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Paradigm {
    Mimicked,
    Mirrored,
}

impl Paradigm {
    pub const ALL: [Paradigm; 2] = [Paradigm::Mimicked, Paradigm::Mirrored];

    pub const fn as_str(self) -> &'static str {
        match self {
            Paradigm::Mimicked => "mimicked",
            Paradigm::Mirrored => "mirrored",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MovementSplit {
    pub train: Vec<u32>,
    pub test: Vec<u32>,
}

/// Per-movement train/test partition of repetition indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSplit {
    pub seed: u64,
    pub movements: Vec<MovementSplit>,
}

impl TrialSplit {
    /// Shuffles each movement's repetitions with its own random stream and
    /// puts the first half in the training set.
    pub fn draw(catalog_len: usize, trials_per_movement: u32, seed: u64) -> Self {
        let movements = (0..catalog_len)
            .map(|m| {
                let mut r = rng::stream(seed, Purpose::Split, m as u32);
                let mut order: Vec<u32> = (0..trials_per_movement).collect();
                for i in (1..order.len()).rev() {
                    let j = r.random_range(0..=i);
                    order.swap(i, j);
                }
                let half = order.len() / 2;
                let mut train = order[..half].to_vec();
                let mut test = order[half..].to_vec();
                train.sort_unstable();
                test.sort_unstable();
                MovementSplit { train, test }
            })
            .collect();
        TrialSplit { seed, movements }
    }

    pub fn is_train(&self, trial: &TrialRecord) -> bool {
        self.movements[trial.movement].train.contains(&trial.trial_index)
    }

    pub fn train_count(&self) -> usize {
        self.movements.iter().map(|m| m.train.len()).sum()
    }

    pub fn test_count(&self) -> usize {
        self.movements.iter().map(|m| m.test.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Outside every trial segment (the initial rest).
    Unassigned,
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledFrame {
    /// Row of the feature matrix (the session frame index).
    pub feature_row: usize,
    pub t: f64,
    pub label: [f64; NUM_DOFS],
    /// Trial whose segment (preceding interval + movement) contains this frame.
    pub trial: Option<usize>,
    pub role: Role,
}

#[derive(Debug, Clone)]
pub struct LabeledDataset<'a> {
    pub paradigm: Paradigm,
    pub features: &'a FeatureMatrix,
    pub frames: Vec<LabeledFrame>,
    /// Label shift in frames; positive means labels were moved later.
    pub applied_lag: i32,
    pub split: TrialSplit,
}

impl LabeledDataset<'_> {
    pub fn train_frames(&self) -> impl Iterator<Item = &LabeledFrame> {
        self.frames.iter().filter(|f| f.role == Role::Train)
    }

    pub fn test_frames(&self) -> impl Iterator<Item = &LabeledFrame> {
        self.frames.iter().filter(|f| f.role == Role::Test)
    }
}

/// Mean of the standardized feature columns; zero-variance columns are skipped.
pub fn standardized_mean_trace(features: &FeatureMatrix) -> Result<Vec<f64>> {
    let n = features.n_frames();
    let p = features.n_features();
    if n < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two feature frames"));
    }
    let mut mean = alloc::vec![0.0; p];
    for f in 0..n {
        for (m, v) in mean.iter_mut().zip(features.row(f)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = alloc::vec![0.0; p];
    for f in 0..n {
        for ((s, v), m) in var.iter_mut().zip(features.row(f)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let inv_sd: Vec<Option<f64>> = var
        .iter()
        .zip(&mean)
        .map(|(&s, &m)| {
            let sd = libm::sqrt(s / n as f64);
            (sd > 1e-12 * (1.0 + libm::fabs(m))).then(|| 1.0 / sd)
        })
        .collect();
    let used = inv_sd.iter().filter(|s| s.is_some()).count();
    if used == 0 {
        return Err(Error::UndefinedCorrelation("all feature columns are constant"));
    }
    Ok((0..n)
        .map(|f| {
            features
                .row(f)
                .iter()
                .zip(&mean)
                .zip(&inv_sd)
                .filter_map(|((v, m), s)| s.map(|s| (v - m) * s))
                .sum::<f64>()
                / used as f64
        })
        .collect())
}

/// Cross-correlation of `Σ_d |label_d|` shifted by `lag` against `trace`.
pub fn lagged_correlation(label_abs: &[f64], trace: &[f64], lag: i32) -> f64 {
    let n = label_abs.len().min(trace.len()) as i64;
    let lag = i64::from(lag);
    let lo = lag.max(0);
    let hi = (n + lag).min(n);
    (lo..hi).map(|t| label_abs[(t - lag) as usize] * trace[t as usize]).sum()
}

/// Lag candidates in tie-break order: 0, −1, +1, −2, +2, …
fn lag_candidates(max_lag: u32) -> impl Iterator<Item = i32> {
    core::iter::once(0).chain((1..=max_lag as i32).flat_map(|l| [-l, l]))
}

/// Single session-wide lag (frames) that best aligns the label stream with
/// the EMG features. Positive means the features trail the labels.
pub fn estimate_alignment_lag(labels: &KinematicStream, features: &FeatureMatrix, max_lag: u32) -> Result<i32> {
    if labels.len() != features.n_frames() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            found: features.n_frames(),
            context: "labels and features must share the frame grid",
        });
    }
    let label_abs: Vec<f64> = labels
        .frames
        .iter()
        .map(|f| f.angles.iter().map(|a| f64::from(a.abs())).sum())
        .collect();
    if label_abs.iter().all(|&v| v == 0.0) {
        return Err(Error::UndefinedCorrelation("labels are identically zero"));
    }
    let trace = standardized_mean_trace(features)?;
    let mut best = (0, f64::NEG_INFINITY);
    for lag in lag_candidates(max_lag) {
        let c = lagged_correlation(&label_abs, &trace, lag);
        if c > best.1 {
            best = (lag, c);
        }
    }
    Ok(best.0)
}

/// Trial segment per frame: from the start of the trial's preceding
/// interval up to the next trial's interval (or the end of the stream).
pub fn segment_of_frames(trials: &[TrialRecord], grid: &KinematicStream) -> Vec<Option<usize>> {
    let n = grid.len();
    let mut out = alloc::vec![None; n];
    let starts: Vec<usize> = trials.iter().map(|t| t.iti_frames(grid).start).collect();
    for (k, &lo) in starts.iter().enumerate() {
        let hi = starts.get(k + 1).copied().unwrap_or(n);
        for slot in &mut out[lo.min(n)..hi.min(n)] {
            *slot = Some(k);
        }
    }
    out
}

/// Builds a dataset from an arbitrary label stream. `lag` shifts labels
/// later by that many frames; the uncovered edge frames are dropped.
pub fn build_from_stream<'a>(
    paradigm: Paradigm,
    labels: &KinematicStream,
    trials: &[TrialRecord],
    features: &'a FeatureMatrix,
    lag: i32,
    split: &TrialSplit,
) -> Result<LabeledDataset<'a>> {
    let n = labels.len();
    if features.n_frames() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: features.n_frames(),
            context: "labels and features must share the frame grid",
        });
    }
    if lag.unsigned_abs() as usize >= n {
        return Err(Error::LagOutOfBounds { lag, frames: n });
    }
    let segments = segment_of_frames(trials, labels);
    let (lo, hi) = if lag >= 0 { (lag as usize, n) } else { (0, n - lag.unsigned_abs() as usize) };
    let frames = (lo..hi)
        .map(|row| {
            let src = (row as i64 - i64::from(lag)) as usize;
            let label = labels.frames[src].angles.map(f64::from);
            let trial = segments[row];
            let role = match trial {
                None => Role::Unassigned,
                Some(k) if split.is_train(&trials[k]) => Role::Train,
                Some(_) => Role::Test,
            };
            LabeledFrame {
                feature_row: row,
                t: features.times[row],
                label,
                trial,
                role,
            }
        })
        .collect();
    Ok(LabeledDataset {
        paradigm,
        features,
        frames,
        applied_lag: lag,
        split: split.clone(),
    })
}

/// Virtual labels shifted by `lag` frames.
pub fn build_mimicked<'a>(
    session: &SessionDataset,
    features: &'a FeatureMatrix,
    lag: i32,
    split: &TrialSplit,
) -> Result<LabeledDataset<'a>> {
    build_from_stream(Paradigm::Mimicked, &session.virtual_stream, &session.trials, features, lag, split)
}

/// Contralateral labels, unshifted.
pub fn build_mirrored<'a>(session: &SessionDataset, features: &'a FeatureMatrix, split: &TrialSplit) -> Result<LabeledDataset<'a>> {
    build_from_stream(Paradigm::Mirrored, &session.contralateral_stream, &session.trials, features, 0, split)
}
