//! Forward EMG model: amplitude-modulated white noise whose envelope is a
//! linear mix of direction-split, rectified joint velocities.

use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::kinematics::KinematicStream;
use crate::rng::{self, Purpose};
use crate::session::{emg_sample_count, EmgBlock};
use crate::{Error, Result, EMG_CHANNELS, EMG_SAMPLE_RATE_HZ, FRAME_RATE_HZ, NUM_DOFS};

/// Number of rectified velocity components: each DOF split into its
/// positive (`2d`) and negative (`2d + 1`) direction.
pub const VELOCITY_COMPONENTS: usize = 2 * NUM_DOFS;

/// Half the feature window, so a causal window's centroid lines up with the
/// movement that produced it.
pub const DEFAULT_LEAD_S: f64 = 0.150;
pub const DEFAULT_RECRUITMENT_THRESHOLD: f64 = 0.0;
pub const DEFAULT_POSTURE_GAIN: f64 = 1.0;
pub const DEFAULT_POSTURE_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmgModelParams {
    /// One row per channel: gain applied to each rectified velocity component.
    pub synergy_matrix: Vec<[f64; VELOCITY_COMPONENTS]>,
    /// Envelope floor, volts.
    pub baseline_noise: f64,
    /// Volts per unit activation.
    pub activation_gain: f64,
    /// Electromechanical lead: muscle activity precedes the movement it
    /// produces by this many seconds.
    pub lead_s: f64,
    /// Recruitment threshold (units/s): each rectified velocity component
    /// drives the muscles only by the amount it exceeds this value.
    pub recruitment_threshold: f64,
    /// Tonic activation per unit of rectified joint displacement, relative
    /// to the phasic (velocity) drive.
    pub posture_gain: f64,
    /// Displacement (normalized units) below which holding a posture needs
    /// no measurable muscle activity.
    pub posture_threshold: f64,
}

impl Default for EmgModelParams {
    /// Each DOF direction owns two channels at gain 1.0; every other entry is 0.05.
    fn default() -> Self {
        let synergy_matrix = (0..EMG_CHANNELS)
            .map(|c| {
                let mut row = [0.05; VELOCITY_COMPONENTS];
                row[(c / 2) % VELOCITY_COMPONENTS] = 1.0;
                row
            })
            .collect();
        EmgModelParams {
            synergy_matrix,
            baseline_noise: 0.1,
            activation_gain: 1.0,
            lead_s: DEFAULT_LEAD_S,
            recruitment_threshold: DEFAULT_RECRUITMENT_THRESHOLD,
            posture_gain: DEFAULT_POSTURE_GAIN,
            posture_threshold: DEFAULT_POSTURE_THRESHOLD,
        }
    }
}

impl EmgModelParams {
    pub fn validate(&self) -> Result<()> {
        if self.synergy_matrix.is_empty() {
            return Err(Error::invalid("synergy_matrix", "needs at least one channel"));
        }
        if self.synergy_matrix.iter().flatten().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::invalid("synergy_matrix", "gains must be finite and non-negative"));
        }
        if !(self.baseline_noise.is_finite() && self.baseline_noise > 0.0) {
            return Err(Error::invalid("baseline_noise", "must be positive"));
        }
        if !(self.activation_gain.is_finite() && self.activation_gain >= 0.0) {
            return Err(Error::invalid("activation_gain", "must be non-negative"));
        }
        if !(self.recruitment_threshold.is_finite() && self.recruitment_threshold >= 0.0) {
            return Err(Error::invalid("recruitment_threshold", "must be finite and non-negative"));
        }
        if !(self.posture_gain.is_finite() && self.posture_gain >= 0.0) {
            return Err(Error::invalid("posture_gain", "must be finite and non-negative"));
        }
        if !(self.posture_threshold.is_finite() && self.posture_threshold >= 0.0) {
            return Err(Error::invalid("posture_threshold", "must be finite and non-negative"));
        }
        if !(self.lead_s.is_finite() && self.lead_s >= 0.0) {
            return Err(Error::invalid("lead_s", "must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Per-frame joint velocity by backward first differences (units/s);
/// the first frame is zero.
pub fn frame_velocities(stream: &KinematicStream) -> Vec<[f64; NUM_DOFS]> {
    let rate = f64::from(FRAME_RATE_HZ);
    let mut out = vec![[0.0; NUM_DOFS]; stream.len()];
    for (i, w) in stream.frames.windows(2).enumerate() {
        for d in 0..NUM_DOFS {
            out[i + 1][d] = (w[1].angle(d) - w[0].angle(d)) * rate;
        }
    }
    out
}

/// Per-frame values linearly interpolated onto the 1 kHz sample grid, read
/// `lead_s` ahead of each sample time and held at the last frame beyond the end.
fn upsample(frames: &[[f64; NUM_DOFS]], samples: usize, lead_s: f64) -> Vec<[f32; NUM_DOFS]> {
    let fr = f64::from(FRAME_RATE_HZ);
    let sr = f64::from(EMG_SAMPLE_RATE_HZ);
    let last = frames.len().saturating_sub(1);
    (0..samples)
        .map(|s| {
            let pos = (s as f64 / sr + lead_s) * fr;
            let i0 = (libm::floor(pos) as usize).min(last);
            let i1 = (i0 + 1).min(last);
            let frac = if i0 == last { 0.0 } else { pos - libm::floor(pos) };
            let mut v = [0.0f32; NUM_DOFS];
            for d in 0..NUM_DOFS {
                v[d] = (frames[i0][d] * (1.0 - frac) + frames[i1][d] * frac) as f32;
            }
            v
        })
        .collect()
}

/// Direction-split, thresholded drive of each velocity component at one sample.
struct Drive {
    u: [f64; VELOCITY_COMPONENTS],
}

impl Drive {
    fn new(v: &[f32; NUM_DOFS], p: &[f32; NUM_DOFS], params: &EmgModelParams) -> Self {
        let mut u = [0.0; VELOCITY_COMPONENTS];
        for d in 0..NUM_DOFS {
            let (v, p) = (f64::from(v[d]), f64::from(p[d]));
            let phasic = (libm::fabs(v) - params.recruitment_threshold).max(0.0);
            let tonic = params.posture_gain * (libm::fabs(p) - params.posture_threshold).max(0.0);
            if v > 0.0 {
                u[2 * d] += phasic;
            } else {
                u[2 * d + 1] += phasic;
            }
            if p > 0.0 {
                u[2 * d] += tonic;
            } else {
                u[2 * d + 1] += tonic;
            }
        }
        Drive { u }
    }

    #[inline]
    fn activation(&self, row: &[f64; VELOCITY_COMPONENTS]) -> f64 {
        row.iter().zip(&self.u).map(|(g, u)| g * u).sum()
    }
}

fn drives(stream: &KinematicStream, params: &EmgModelParams, samples: usize) -> Vec<Drive> {
    let positions: Vec<[f64; NUM_DOFS]> = stream.frames.iter().map(|f| core::array::from_fn(|d| f.angle(d))).collect();
    let v = upsample(&frame_velocities(stream), samples, params.lead_s);
    let p = upsample(&positions, samples, params.lead_s);
    v.iter().zip(&p).map(|(v, p)| Drive::new(v, p, params)).collect()
}

/// Noise-free amplitude envelope of every channel at 1 kHz
/// (`activation_gain · a + baseline_noise`), sample-major.
pub fn emg_envelope(stream: &KinematicStream, params: &EmgModelParams) -> Result<EmgBlock> {
    params.validate()?;
    let n = emg_sample_count(stream.len() as f64 / f64::from(FRAME_RATE_HZ), EMG_SAMPLE_RATE_HZ);
    let drive = drives(stream, params, n);
    let channels = params.synergy_matrix.len();
    let mut samples = vec![0.0f32; n * channels];
    for (s, u) in drive.iter().enumerate() {
        for (c, row) in params.synergy_matrix.iter().enumerate() {
            samples[s * channels + c] = (params.activation_gain * u.activation(row) + params.baseline_noise) as f32;
        }
    }
    Ok(EmgBlock {
        sample_rate: EMG_SAMPLE_RATE_HZ,
        channels,
        samples,
    })
}

/// Synthesizes raw EMG from the True stream. Each channel draws from its
/// own random stream, so channels are independent of one another's count.
pub fn synthesize_emg(stream: &KinematicStream, params: &EmgModelParams, seed: u64) -> Result<EmgBlock> {
    params.validate()?;
    let n = emg_sample_count(stream.len() as f64 / f64::from(FRAME_RATE_HZ), EMG_SAMPLE_RATE_HZ);
    let drive = drives(stream, params, n);
    let channels = params.synergy_matrix.len();
    let mut samples = vec![0.0f32; n * channels];
    for (c, row) in params.synergy_matrix.iter().enumerate() {
        let mut r = rng::stream(seed, Purpose::EmgChannel, c as u32);
        for (s, u) in drive.iter().enumerate() {
            let envelope = params.activation_gain * u.activation(row) + params.baseline_noise;
            let noise: f64 = StandardNormal.sample(&mut r);
            samples[s * channels + c] = (envelope * noise) as f32;
        }
    }
    Ok(EmgBlock {
        sample_rate: EMG_SAMPLE_RATE_HZ,
        channels,
        samples,
    })
}
