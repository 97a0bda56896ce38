//! The per-participant data model.

use alloc::vec::Vec;
use core::ops::{Range, RangeInclusive};

use serde::{Deserialize, Serialize};

use crate::kinematics::{KinematicStream, StreamSource};
use crate::protocol::{MovementSpec, TrialTimingParams};
use crate::{Error, Result};

/// One 1.5-s movement attempt and the 1-s rest that precedes it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    /// Index into the session's movement catalog.
    pub movement: usize,
    /// Repetition number within the movement, `0..trials_per_movement`.
    pub trial_index: u32,
    pub t_start: f64,
    pub t_end: f64,
    /// `[t0, t1)` of the intertrial rest before this trial. For the first
    /// trial this is the last second of the initial rest period.
    pub preceding_iti: [f64; 2],
}

impl TrialRecord {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    /// Inclusive frame range `[start, end]` of the movement itself.
    pub fn frames(&self, stream: &KinematicStream) -> RangeInclusive<usize> {
        let last = stream.len().saturating_sub(1) as isize;
        let a = stream.index_of(self.t_start).clamp(0, last) as usize;
        let b = stream.index_of(self.t_end).clamp(0, last) as usize;
        a..=b
    }

    /// Half-open frame range of the preceding intertrial interval.
    pub fn iti_frames(&self, stream: &KinematicStream) -> Range<usize> {
        stream.index_range(self.preceding_iti[0], self.preceding_iti[1])
    }
}

/// Raw surface EMG, sample-major (`samples[s * channels + c]`).
#[derive(Debug, Clone, PartialEq)]
pub struct EmgBlock {
    pub sample_rate: u32,
    pub channels: usize,
    pub samples: Vec<f32>,
}

impl EmgBlock {
    pub fn sample_count(&self) -> usize {
        if self.channels == 0 {
            0
        } else {
            self.samples.len() / self.channels
        }
    }

    #[inline]
    pub fn get(&self, sample: usize, channel: usize) -> f32 {
        self.samples[sample * self.channels + channel]
    }

    pub fn channel(&self, channel: usize) -> impl Iterator<Item = f32> + '_ {
        self.samples.iter().skip(channel).step_by(self.channels).copied()
    }

    pub fn duration(&self) -> f64 {
        self.sample_count() as f64 / f64::from(self.sample_rate)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.samples.len() % self.channels != 0 {
            return Err(Error::invalid("emg", "sample buffer is not a whole number of frames"));
        }
        if self.samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("emg samples"));
        }
        Ok(())
    }
}

/// Number of EMG samples covering `duration_s` seconds.
pub fn emg_sample_count(duration_s: f64, sample_rate: u32) -> usize {
    // The product is an integer for every duration on the 30 Hz grid; the
    // small guard keeps `ceil` from rounding 480000.0000000001 up.
    libm::ceil(duration_s * f64::from(sample_rate) - 1e-6) as usize
}

/// A full simulated recording for one participant.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionDataset {
    pub participant_id: u32,
    pub seed: u64,
    pub catalog: Vec<MovementSpec>,
    pub timing: TrialTimingParams,
    pub trials: Vec<TrialRecord>,
    pub true_stream: KinematicStream,
    pub contralateral_stream: KinematicStream,
    pub virtual_stream: KinematicStream,
    pub emg: EmgBlock,
    /// `[t0, t1)` of the initial rest period.
    pub baseline_rest_window: [f64; 2],
}

impl SessionDataset {
    pub fn stream(&self, source: StreamSource) -> &KinematicStream {
        match source {
            StreamSource::True => &self.true_stream,
            StreamSource::Contralateral => &self.contralateral_stream,
            StreamSource::Virtual => &self.virtual_stream,
        }
    }

    pub fn duration(&self) -> f64 {
        self.virtual_stream.len() as f64 / f64::from(crate::FRAME_RATE_HZ)
    }

    pub fn validate(&self) -> Result<()> {
        for s in [&self.true_stream, &self.contralateral_stream, &self.virtual_stream] {
            s.validate()?;
        }
        let reference = &self.virtual_stream;
        for s in [&self.true_stream, &self.contralateral_stream] {
            if s.len() != reference.len() || s.frames.iter().zip(&reference.frames).any(|(a, b)| a.t != b.t) {
                return Err(Error::invalid("streams", "all three streams must share one frame grid"));
            }
        }
        validate_schedule(&self.trials, &self.catalog, &self.timing)?;
        self.emg.validate()?;
        let expected = emg_sample_count(self.duration(), self.emg.sample_rate);
        if self.emg.sample_count() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: self.emg.sample_count(),
                context: "emg sample count",
            });
        }
        Ok(())
    }
}

pub(crate) fn validate_schedule(trials: &[TrialRecord], catalog: &[MovementSpec], timing: &TrialTimingParams) -> Result<()> {
    let expected = catalog.len() * timing.trials_per_movement as usize;
    if trials.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            found: trials.len(),
            context: "trial count",
        });
    }
    for w in trials.windows(2) {
        if w[1].t_start < w[0].t_end {
            return Err(Error::invalid("trials", "trials overlap or are out of order"));
        }
    }
    for t in trials {
        if t.movement >= catalog.len() {
            return Err(Error::invalid("trials", "movement index outside catalog"));
        }
        if libm::fabs(t.duration() - timing.trial_duration()) > 1e-9 {
            return Err(Error::invalid("trials", "trial duration differs from the timing parameters"));
        }
    }
    Ok(())
}

/// Everything that determines one simulated recording apart from its seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub catalog: Vec<MovementSpec>,
    pub timing: TrialTimingParams,
    pub imperfections: crate::humansim::ImperfectionParams,
    pub emg: crate::emgsim::EmgModelParams,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            catalog: crate::protocol::default_movement_catalog(),
            timing: TrialTimingParams::default(),
            imperfections: crate::humansim::ImperfectionParams::default(),
            emg: crate::emgsim::EmgModelParams::default(),
        }
    }
}

/// Schedule, virtual hand, both simulated hands and EMG for one participant.
pub fn simulate_session(
    config: &SessionConfig,
    participant_id: u32,
    seed: u64,
) -> Result<(SessionDataset, crate::humansim::GroundTruthLog)> {
    let virt = crate::protocol::generate_virtual_stream(&config.catalog, &config.timing)?;
    let hands = crate::humansim::simulate_hands(&virt, &config.imperfections, seed)?;
    let emg = crate::emgsim::synthesize_emg(&hands.true_motion, &config.emg, seed)?;
    let baseline_rest_window = virt.baseline_rest_window();
    let session = SessionDataset {
        participant_id,
        seed,
        catalog: virt.catalog,
        timing: virt.timing,
        trials: virt.trials,
        true_stream: hands.true_stream,
        contralateral_stream: hands.contralateral_stream,
        virtual_stream: virt.stream,
        emg,
        baseline_rest_window,
    };
    session.validate()?;
    Ok((session, hands.log))
}
