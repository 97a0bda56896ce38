//! Ground-truth oracle: derives the True (mimicking) hand and the
//! Contralateral (mirroring) hand from the Virtual stream.
//!
//! Per trial the True hand follows the virtual trapezoid delayed by a
//! reaction time and scaled by a gain. Non-target DOFs receive a scaled copy
//! of the same profile (coupling) whose direction occasionally reverses.
//! The resting posture follows a clamped AR(1) walk that steps once per
//! intertrial interval, gliding to each new offset, and every frame gets
//! tracker noise. The Contralateral hand replays the True movement with a
//! two-sided timing jitter and a multiplicative magnitude error, shares the
//! drift, and adds its own per-interval offset and tracker noise.

use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::kinematics::{KinematicStream, StreamSource};
use crate::protocol::{profile_or_zero, MovementSpec, VirtualSession};
use crate::rng::{self, Purpose, BASELINE_INDEX};
use crate::{Error, Result, FRAME_RATE_HZ, NUM_DOFS};

pub type CouplingMatrix = [[f64; NUM_DOFS]; NUM_DOFS];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImperfectionParams {
    /// Row = target DOF, column = coupled DOF; fraction of the target
    /// profile leaked into the column DOF. Diagonal is 1.
    pub coupling_matrix: CouplingMatrix,
    /// Probability that a trial's leak into a given non-target DOF moves it
    /// the opposite way to the matrix sign; 0.5 makes the direction unbiased.
    pub coupling_flip_prob: f64,
    /// Random-walk increment s.d. per intertrial interval (normalized units).
    pub drift_step_sigma: f64,
    pub drift_clamp: f64,
    /// Fraction of the previous offset kept at each step; 1 is a pure
    /// random walk, smaller values pull the posture back toward rest.
    pub drift_persistence: f64,
    /// Seconds from the start of an intertrial interval over which the rest
    /// posture glides linearly to its new offset; 0 steps instantly.
    pub drift_ramp_s: f64,
    pub reaction_delay_mean: f64,
    pub reaction_delay_sd: f64,
    pub magnitude_gain_mean: f64,
    pub magnitude_gain_sd: f64,
    pub tracker_noise_sigma: f64,
    pub mirror_timing_jitter_sd: f64,
    pub mirror_magnitude_sd: f64,
    /// Per-interval rest offset of the Contralateral hand on top of the
    /// shared drift (normalized units).
    pub mirror_rest_offset_sd: f64,
}

/// Anatomical weighting of the default coupling matrix. Neighbouring digits
/// and the two wrist DOFs couple more strongly than distant pairs.
pub fn coupling_structure() -> CouplingMatrix {
    let mut m = [[0.0; NUM_DOFS]; NUM_DOFS];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, w) in row.iter_mut().enumerate() {
            *w = if i == j {
                1.0
            } else if (i <= 5 && j <= 5 && i.abs_diff(j) == 1) || (i >= 6 && j >= 6) {
                1.2
            } else {
                1.0
            };
        }
    }
    m
}

/// `coupling_structure()` with every off-diagonal entry multiplied by `scale`.
pub fn scaled_coupling(scale: f64) -> CouplingMatrix {
    let mut m = coupling_structure();
    for (i, row) in m.iter_mut().enumerate() {
        for (j, w) in row.iter_mut().enumerate() {
            if i != j {
                *w *= scale;
            }
        }
    }
    m
}

impl Default for ImperfectionParams {
    fn default() -> Self {
        ImperfectionParams::paper_tuned()
    }
}

impl ImperfectionParams {
    /// No imperfections: the True and Contralateral hands equal the virtual hand.
    pub fn ideal() -> Self {
        let mut coupling_matrix = [[0.0; NUM_DOFS]; NUM_DOFS];
        for (i, row) in coupling_matrix.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        ImperfectionParams {
            coupling_matrix,
            coupling_flip_prob: 0.0,
            drift_step_sigma: 0.0,
            drift_clamp: 0.0,
            drift_persistence: 1.0,
            drift_ramp_s: 0.0,
            reaction_delay_mean: 0.0,
            reaction_delay_sd: 0.0,
            magnitude_gain_mean: 1.0,
            magnitude_gain_sd: 0.0,
            tracker_noise_sigma: 0.0,
            mirror_timing_jitter_sd: 0.0,
            mirror_magnitude_sd: 0.0,
            mirror_rest_offset_sd: 0.0,
        }
    }

    /// Defaults calibrated by Monte-Carlo so that the analysis recovers the
    /// published cohort means (see `data/paper_tuned_imperfections.json` and
    /// the `calibrate` binary in the `mirrortrain` crate).
    pub fn paper_tuned() -> Self {
        ImperfectionParams {
            coupling_matrix: scaled_coupling(tuned::COUPLING_SCALE),
            coupling_flip_prob: COUPLING_FLIP_PROB,
            drift_step_sigma: tuned::DRIFT_STEP_SIGMA,
            drift_clamp: tuned::DRIFT_CLAMP,
            drift_persistence: DRIFT_PERSISTENCE,
            drift_ramp_s: DRIFT_RAMP_S,
            reaction_delay_mean: 0.08,
            reaction_delay_sd: 0.05,
            magnitude_gain_mean: tuned::MAGNITUDE_GAIN_MEAN,
            magnitude_gain_sd: tuned::MAGNITUDE_GAIN_SD,
            tracker_noise_sigma: tuned::TRACKER_NOISE_SIGMA,
            mirror_timing_jitter_sd: 0.06,
            mirror_magnitude_sd: tuned::MIRROR_MAGNITUDE_SD,
            mirror_rest_offset_sd: tuned::MIRROR_REST_OFFSET_SD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, row) in self.coupling_matrix.iter().enumerate() {
            for (j, &w) in row.iter().enumerate() {
                if i == j && w != 1.0 {
                    return Err(Error::invalid("coupling_matrix", "diagonal entries must be 1"));
                }
                if i != j && !(0.0..1.0).contains(&w) {
                    return Err(Error::invalid("coupling_matrix", "off-diagonal entries must lie in [0, 1)"));
                }
            }
        }
        let sigmas = [
            ("drift_step_sigma", self.drift_step_sigma),
            ("drift_clamp", self.drift_clamp),
            ("drift_ramp_s", self.drift_ramp_s),
            ("reaction_delay_mean", self.reaction_delay_mean),
            ("reaction_delay_sd", self.reaction_delay_sd),
            ("magnitude_gain_mean", self.magnitude_gain_mean),
            ("magnitude_gain_sd", self.magnitude_gain_sd),
            ("tracker_noise_sigma", self.tracker_noise_sigma),
            ("mirror_timing_jitter_sd", self.mirror_timing_jitter_sd),
            ("mirror_magnitude_sd", self.mirror_magnitude_sd),
            ("mirror_rest_offset_sd", self.mirror_rest_offset_sd),
        ];
        if !(0.0..=1.0).contains(&self.coupling_flip_prob) {
            return Err(Error::invalid("coupling_flip_prob", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.drift_persistence) {
            return Err(Error::invalid("drift_persistence", "must lie in [0, 1]"));
        }
        for (field, v) in sigmas {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(field, "must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Default probability of a reversed coupling direction.
pub const COUPLING_FLIP_PROB: f64 = 0.2;

/// Default per-interval persistence of the rest-posture offset.
pub const DRIFT_PERSISTENCE: f64 = 0.9;

/// Default glide time of the rest posture between offsets.
pub const DRIFT_RAMP_S: f64 = 0.5;

/// Constants produced by the Monte-Carlo calibration.
pub mod tuned {
    pub const COUPLING_SCALE: f64 = 0.288;
    pub const DRIFT_STEP_SIGMA: f64 = 0.0903;
    pub const DRIFT_CLAMP: f64 = 0.35;
    pub const MAGNITUDE_GAIN_MEAN: f64 = 0.754;
    pub const MAGNITUDE_GAIN_SD: f64 = 0.1;
    pub const TRACKER_NOISE_SIGMA: f64 = 0.005;
    pub const MIRROR_MAGNITUDE_SD: f64 = 0.313;
    pub const MIRROR_REST_OFFSET_SD: f64 = 0.17;
}

/// What the simulator actually drew for one trial of the True hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialTruth {
    pub trial: usize,
    pub delay_s: f64,
    pub gain: f64,
    /// Peak |leaked position| per DOF, normalized units; 0 for target DOFs.
    pub coupling_peaks: [f64; NUM_DOFS],
    /// Direction of the leak per DOF: +1 follows the matrix sign, -1 reverses it.
    pub coupling_signs: [f64; NUM_DOFS],
    /// Drift offset in force from this trial's preceding intertrial interval.
    pub rest_offset: [f64; NUM_DOFS],
    /// The delayed movement did not fit inside the trial's window.
    pub truncated: bool,
}

/// What the simulator drew for one trial of the Contralateral hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MirrorTruth {
    pub trial: usize,
    /// Time shift relative to the True hand; positive lags.
    pub jitter_s: f64,
    /// Amplitude factor is `1 + magnitude`.
    pub magnitude: f64,
    pub rest_offset: [f64; NUM_DOFS],
    pub truncated: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLog {
    pub trials: Vec<TrialTruth>,
    pub mirror: Vec<MirrorTruth>,
}

/// Frame bookkeeping shared by both hands.
struct Layout {
    n_frames: usize,
    /// First frame of each trial.
    starts: Vec<usize>,
    /// First frame of each trial's preceding intertrial interval; the drift
    /// and noise segments begin here.
    segment_starts: Vec<usize>,
    /// `[lo, hi)` frames in which a trial's movement may be rendered.
    regions: Vec<(usize, usize)>,
}

impl Layout {
    fn new(virt: &VirtualSession) -> Self {
        let stream = &virt.stream;
        let n_frames = stream.len();
        let starts: Vec<usize> = virt.trials.iter().map(|t| stream.index_of(t.t_start) as usize).collect();
        let segment_starts = virt.trials.iter().map(|t| stream.index_of(t.preceding_iti[0]) as usize).collect();
        let rate = f64::from(FRAME_RATE_HZ);
        let trial_frames = libm::round(virt.timing.trial_duration() * rate) as usize;
        let iti_frames = libm::round(virt.timing.iti * rate) as usize;
        let before = iti_frames / 2;
        let after = iti_frames - before;
        let regions = starts
            .iter()
            .map(|&s| (s.saturating_sub(before), (s + trial_frames + after).min(n_frames)))
            .collect();
        Layout {
            n_frames,
            starts,
            segment_starts,
            regions,
        }
    }

    /// Segment index (trial whose preceding interval has begun) per frame.
    fn segment_of_frames(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.n_frames];
        for (k, &lo) in self.segment_starts.iter().enumerate() {
            let hi = self.segment_starts.get(k + 1).copied().unwrap_or(self.n_frames);
            for slot in &mut out[lo..hi] {
                *slot = Some(k);
            }
        }
        out
    }
}

/// Per-DOF leak weights of a movement: the direction sign on target DOFs and
/// the direction-signed coupling (averaged over targets) elsewhere.
pub fn leak_vector(spec: &MovementSpec, coupling: &CouplingMatrix) -> [f64; NUM_DOFS] {
    let signs = spec.target_signs();
    let mut out = [0.0; NUM_DOFS];
    let n = spec.targets.len() as f64;
    for (j, slot) in out.iter_mut().enumerate() {
        *slot = if signs[j] != 0.0 {
            signs[j]
        } else {
            spec.targets
                .iter()
                .map(|t| coupling[t.dof.index()][j] * t.direction.sign())
                .sum::<f64>()
                / n
        };
    }
    out
}

fn draw_coupling_signs(flip_prob: f64, seed: u64, k: usize) -> [f64; NUM_DOFS] {
    if flip_prob == 0.0 {
        return [1.0; NUM_DOFS];
    }
    let mut r = rng::stream(seed, Purpose::CouplingSign, k as u32);
    core::array::from_fn(|_| if rand::Rng::random::<f64>(&mut r) < flip_prob { -1.0 } else { 1.0 })
}

/// Applies per-trial coupling directions; target DOFs keep their sign.
fn signed_leak(spec: &MovementSpec, leak: &[f64; NUM_DOFS], signs: &[f64; NUM_DOFS]) -> [f64; NUM_DOFS] {
    core::array::from_fn(|j| if spec.is_target(j) { leak[j] } else { leak[j] * signs[j] })
}

/// Renders one trial's movement (delayed, scaled trapezoid times the leak
/// vector) into `out` over the trial's region. Returns `true` if the
/// movement did not fit in the region.
#[allow(clippy::too_many_arguments)]
fn render_movement(
    virt: &VirtualSession,
    layout: &Layout,
    k: usize,
    leak: &[f64; NUM_DOFS],
    delay: f64,
    amplitude: f64,
    out: &mut [[f64; NUM_DOFS]],
) -> bool {
    let spec = &virt.catalog[virt.trials[k].movement];
    let start = layout.starts[k];
    let (lo, hi) = layout.regions[k];
    let rate = f64::from(FRAME_RATE_HZ);
    for (i, frame) in out[lo..hi].iter_mut().enumerate() {
        let i = lo + i;
        let offset = i as f64 - start as f64;
        let tau = offset / rate - delay;
        let p = profile_or_zero(tau, &virt.timing, spec.peak_amplitude) * amplitude;
        if p != 0.0 {
            for (x, w) in frame.iter_mut().zip(leak) {
                *x = w * p;
            }
        }
    }
    let first = (lo as f64 - start as f64) / rate;
    let last = (hi as f64 - 1.0 - start as f64) / rate;
    delay < first || delay + virt.timing.trial_duration() > last
}

fn normal(rng: &mut impl rand::RngCore) -> f64 {
    StandardNormal.sample(rng)
}

fn add_tracker_noise(
    frames: &mut [[f64; NUM_DOFS]],
    layout: &Layout,
    sigma: f64,
    seed: u64,
    purpose: Purpose,
) {
    if sigma == 0.0 {
        return;
    }
    let first_segment = layout.segment_starts.first().copied().unwrap_or(layout.n_frames);
    let mut fill = |range: core::ops::Range<usize>, index: u32| {
        let mut r = rng::stream(seed, purpose, index);
        for frame in &mut frames[range] {
            for x in frame.iter_mut() {
                *x += sigma * normal(&mut r);
            }
        }
    };
    fill(0..first_segment, BASELINE_INDEX);
    for (k, &lo) in layout.segment_starts.iter().enumerate() {
        let hi = layout.segment_starts.get(k + 1).copied().unwrap_or(layout.n_frames);
        fill(lo..hi, k as u32);
    }
}

fn finish_stream(source: StreamSource, frames: &[[f64; NUM_DOFS]]) -> KinematicStream {
    let angles = frames
        .iter()
        .map(|f| f.map(|x| x.clamp(-1.0, 1.0) as f32))
        .collect();
    KinematicStream::from_angles(source, angles)
}

/// Draws the True hand from the virtual session: the tracked stream, the
/// noise-free pose it was tracked from, and the latent draws.
pub fn simulate_true_stream(
    virt: &VirtualSession,
    params: &ImperfectionParams,
    seed: u64,
) -> Result<(KinematicStream, KinematicStream, GroundTruthLog)> {
    params.validate()?;
    let layout = Layout::new(virt);
    let leaks: Vec<_> = virt.catalog.iter().map(|m| leak_vector(m, &params.coupling_matrix)).collect();

    let mut movement = vec![[0.0f64; NUM_DOFS]; layout.n_frames];
    let mut truths = Vec::with_capacity(virt.trials.len());
    let mut drift = [0.0f64; NUM_DOFS];
    for (k, trial) in virt.trials.iter().enumerate() {
        let mut r = rng::stream(seed, Purpose::TrialKinematics, k as u32);
        let delay = (params.reaction_delay_mean + params.reaction_delay_sd * normal(&mut r)).max(0.0);
        let gain = (params.magnitude_gain_mean + params.magnitude_gain_sd * normal(&mut r)).max(0.0);
        if k > 0 && params.drift_step_sigma > 0.0 {
            let mut r = rng::stream(seed, Purpose::Drift, k as u32);
            for d in &mut drift {
                *d = (params.drift_persistence * *d + params.drift_step_sigma * normal(&mut r)).clamp(-params.drift_clamp, params.drift_clamp);
            }
        }
        let coupling_signs = draw_coupling_signs(params.coupling_flip_prob, seed, k);
        let leak = signed_leak(&virt.catalog[trial.movement], &leaks[trial.movement], &coupling_signs);
        let truncated = render_movement(virt, &layout, k, &leak, delay, gain, &mut movement);
        let (lo, hi) = layout.regions[k];
        let mut coupling_peaks = [0.0; NUM_DOFS];
        let spec = &virt.catalog[trial.movement];
        for (j, peak) in coupling_peaks.iter_mut().enumerate() {
            if !spec.is_target(j) {
                *peak = movement[lo..hi].iter().map(|f| libm::fabs(f[j])).fold(0.0, f64::max);
            }
        }
        truths.push(TrialTruth {
            trial: k,
            delay_s: delay,
            gain,
            coupling_peaks,
            coupling_signs,
            rest_offset: drift,
            truncated,
        });
    }

    let mut frames = movement;
    let drift = drift_offsets(&layout, &truths, params.drift_ramp_s);
    for (frame, d) in frames.iter_mut().zip(&drift) {
        for (x, o) in frame.iter_mut().zip(d) {
            *x += o;
        }
    }
    let motion = finish_stream(StreamSource::True, &frames);
    add_tracker_noise(&mut frames, &layout, params.tracker_noise_sigma, seed, Purpose::TrueTrackerNoise);

    let log = GroundTruthLog {
        trials: truths,
        mirror: Vec::new(),
    };
    Ok((finish_stream(StreamSource::True, &frames), motion, log))
}

/// Shared rest-posture offset of every frame: the offset drawn for a
/// segment, reached by a linear glide from the previous segment's offset
/// over the first `ramp_s` seconds of the segment.
fn drift_offsets(layout: &Layout, truths: &[TrialTruth], ramp_s: f64) -> Vec<[f64; NUM_DOFS]> {
    let ramp = libm::round(ramp_s * f64::from(FRAME_RATE_HZ)) as usize;
    let segments = layout.segment_of_frames();
    segments
        .iter()
        .enumerate()
        .map(|(i, seg)| {
            let Some(k) = *seg else {
                return [0.0; NUM_DOFS];
            };
            let to = truths[k].rest_offset;
            let from = if k == 0 { [0.0; NUM_DOFS] } else { truths[k - 1].rest_offset };
            let step = i - layout.segment_starts[k] + 1;
            if step >= ramp {
                return to;
            }
            let w = step as f64 / ramp as f64;
            core::array::from_fn(|d| from[d] + (to[d] - from[d]) * w)
        })
        .collect()
}

/// Draws the Contralateral hand. It re-renders each True movement from the
/// latent per-trial draws in `truth`, so it needs the log produced by
/// [`simulate_true_stream`] with the same `seed`.
pub fn simulate_contralateral_stream(
    virt: &VirtualSession,
    truth: &GroundTruthLog,
    params: &ImperfectionParams,
    seed: u64,
) -> Result<(KinematicStream, Vec<MirrorTruth>)> {
    params.validate()?;
    if truth.trials.len() != virt.trials.len() {
        return Err(Error::DimensionMismatch {
            expected: virt.trials.len(),
            found: truth.trials.len(),
            context: "ground-truth trials",
        });
    }
    let layout = Layout::new(virt);
    let leaks: Vec<_> = virt.catalog.iter().map(|m| leak_vector(m, &params.coupling_matrix)).collect();

    let mut frames = vec![[0.0f64; NUM_DOFS]; layout.n_frames];
    let mut mirror = Vec::with_capacity(virt.trials.len());
    for (k, trial) in virt.trials.iter().enumerate() {
        let t = &truth.trials[k];
        let mut r = rng::stream(seed, Purpose::Mirror, k as u32);
        let jitter = params.mirror_timing_jitter_sd * normal(&mut r);
        let magnitude = params.mirror_magnitude_sd * normal(&mut r);
        let mut rest_offset = [0.0; NUM_DOFS];
        if k > 0 && params.mirror_rest_offset_sd > 0.0 {
            let mut r = rng::stream(seed, Purpose::MirrorRestOffset, k as u32);
            for o in &mut rest_offset {
                *o = params.mirror_rest_offset_sd * normal(&mut r);
            }
        }
        let amplitude = t.gain * (1.0 + magnitude);
        let leak = signed_leak(&virt.catalog[trial.movement], &leaks[trial.movement], &t.coupling_signs);
        let truncated = render_movement(virt, &layout, k, &leak, t.delay_s + jitter, amplitude, &mut frames);
        mirror.push(MirrorTruth {
            trial: k,
            jitter_s: jitter,
            magnitude,
            rest_offset,
            truncated,
        });
    }

    let drift = drift_offsets(&layout, &truth.trials, params.drift_ramp_s);
    let segments = layout.segment_of_frames();
    for ((frame, seg), d) in frames.iter_mut().zip(&segments).zip(&drift) {
        if let Some(k) = *seg {
            for ((x, d), o) in frame.iter_mut().zip(d).zip(&mirror[k].rest_offset) {
                *x += d + o;
            }
        }
    }
    add_tracker_noise(
        &mut frames,
        &layout,
        params.tracker_noise_sigma,
        seed,
        Purpose::ContralateralTrackerNoise,
    );
    Ok((finish_stream(StreamSource::Contralateral, &frames), mirror))
}

/// Both simulated hands plus the log of every latent draw.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedHands {
    pub true_stream: KinematicStream,
    /// The True hand's actual pose, before tracker noise; drives the EMG.
    pub true_motion: KinematicStream,
    pub contralateral_stream: KinematicStream,
    pub log: GroundTruthLog,
}

pub fn simulate_hands(virt: &VirtualSession, params: &ImperfectionParams, seed: u64) -> Result<SimulatedHands> {
    let (true_stream, true_motion, mut log) = simulate_true_stream(virt, params, seed)?;
    let (contralateral_stream, mirror) = simulate_contralateral_stream(virt, &log, params, seed)?;
    log.mirror = mirror;
    Ok(SimulatedHands {
        true_stream,
        true_motion,
        contralateral_stream,
        log,
    })
}
