//! Movement catalog, trial timing and the preprogrammed virtual hand.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::kinematics::{frame_time, KinematicStream, StreamSource};
use crate::session::TrialRecord;
use crate::{DofId, Error, Result, FRAME_RATE_HZ, NUM_DOFS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Positive,
    Negative,
}

impl Direction {
    pub const fn sign(self) -> f64 {
        match self {
            Direction::Positive => 1.0,
            Direction::Negative => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MovementTarget {
    pub dof: DofId,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MovementSpec {
    pub name: String,
    pub targets: Vec<MovementTarget>,
    #[serde(default = "default_peak")]
    pub peak_amplitude: f64,
}

fn default_peak() -> f64 {
    1.0
}

impl MovementSpec {
    pub fn new(name: &str, targets: &[(DofId, Direction)]) -> Self {
        MovementSpec {
            name: name.to_string(),
            targets: targets.iter().map(|&(dof, direction)| MovementTarget { dof, direction }).collect(),
            peak_amplitude: 1.0,
        }
    }

    pub fn is_target(&self, dof: usize) -> bool {
        self.targets.iter().any(|t| t.dof.index() == dof)
    }

    /// Per-DOF signed weight: the direction sign for target DOFs, 0 elsewhere.
    pub fn target_signs(&self) -> [f64; NUM_DOFS] {
        let mut out = [0.0; NUM_DOFS];
        for t in &self.targets {
            out[t.dof.index()] = t.direction.sign();
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.targets.is_empty() {
            return Err(Error::invalid("catalog", "movement has no target DOF"));
        }
        for (i, a) in self.targets.iter().enumerate() {
            if self.targets[..i].iter().any(|b| b.dof == a.dof) {
                return Err(Error::invalid("catalog", "movement lists a DOF twice"));
            }
        }
        if !(self.peak_amplitude > 0.0 && self.peak_amplitude <= 1.0) {
            return Err(Error::invalid("catalog", "peak_amplitude must be in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrialTimingParams {
    pub ramp_up: f64,
    pub hold: f64,
    pub ramp_down: f64,
    pub iti: f64,
    pub initial_rest: f64,
    pub trials_per_movement: u32,
}

impl Default for TrialTimingParams {
    fn default() -> Self {
        TrialTimingParams {
            ramp_up: 0.7,
            hold: 0.1,
            ramp_down: 0.7,
            iti: 1.0,
            initial_rest: 30.0,
            trials_per_movement: 10,
        }
    }
}

impl TrialTimingParams {
    pub fn trial_duration(&self) -> f64 {
        self.ramp_up + self.hold + self.ramp_down
    }

    pub fn validate(&self) -> Result<()> {
        let on_grid = |x: f64| {
            let frames = x * f64::from(FRAME_RATE_HZ);
            libm::fabs(frames - libm::round(frames)) < 1e-9
        };
        if !(self.ramp_up > 0.0 && self.hold >= 0.0 && self.ramp_down > 0.0) {
            return Err(Error::invalid("timing", "ramp durations must be positive"));
        }
        if !(self.iti > 0.0 && self.initial_rest >= self.iti) {
            return Err(Error::invalid("timing", "initial_rest must cover at least one iti"));
        }
        if self.trials_per_movement < 2 {
            return Err(Error::invalid("timing", "need at least 2 trials per movement"));
        }
        if ![self.trial_duration(), self.iti, self.initial_rest].into_iter().all(on_grid) {
            return Err(Error::invalid("timing", "durations must be whole numbers of 30 Hz frames"));
        }
        Ok(())
    }
}

/// The enumerable movement list: flexion and extension of D1–D5, wrist
/// flexion/extension and pronation/supination, thumb abduction/adduction,
/// and the two whole-hand combinations. 18 entries.
pub fn default_movement_catalog() -> Vec<MovementSpec> {
    use Direction::{Negative, Positive};
    use DofId::*;
    let digits = [
        (ThumbFlexion, "D1"),
        (IndexFlexion, "D2"),
        (MiddleFlexion, "D3"),
        (RingFlexion, "D4"),
        (LittleFlexion, "D5"),
    ];
    let mut out = Vec::with_capacity(18);
    for (dof, label) in digits {
        out.push(MovementSpec::new(&alloc::format!("{label} flexion"), &[(dof, Positive)]));
        out.push(MovementSpec::new(&alloc::format!("{label} extension"), &[(dof, Negative)]));
    }
    out.push(MovementSpec::new("wrist flexion", &[(WristFlexion, Positive)]));
    out.push(MovementSpec::new("wrist extension", &[(WristFlexion, Negative)]));
    out.push(MovementSpec::new("wrist pronation", &[(WristPronation, Positive)]));
    out.push(MovementSpec::new("wrist supination", &[(WristPronation, Negative)]));
    out.push(MovementSpec::new("thumb abduction", &[(ThumbAbduction, Positive)]));
    out.push(MovementSpec::new("thumb adduction", &[(ThumbAbduction, Negative)]));
    let all = |dir| digits.map(|(d, _)| (d, dir));
    out.push(MovementSpec::new("D1-D5 flexion", &all(Positive)));
    out.push(MovementSpec::new("D1-D5 extension", &all(Negative)));
    out
}

/// Trapezoid: ramp to `peak`, hold, ramp back to 0.
pub fn virtual_profile(t_in_trial: f64, timing: &TrialTimingParams, peak: f64) -> Result<f64> {
    let duration = timing.trial_duration();
    if !(0.0..=duration).contains(&t_in_trial) {
        return Err(Error::OutsideTrial { t: t_in_trial, duration });
    }
    Ok(profile_or_zero(t_in_trial, timing, peak))
}

/// [`virtual_profile`] extended by zero outside the trial.
pub fn profile_or_zero(t: f64, timing: &TrialTimingParams, peak: f64) -> f64 {
    let hold_end = timing.ramp_up + timing.hold;
    let duration = timing.trial_duration();
    if t <= 0.0 || t >= duration {
        0.0
    } else if t < timing.ramp_up {
        peak * t / timing.ramp_up
    } else if t <= hold_end {
        peak
    } else {
        peak * (duration - t) / timing.ramp_down
    }
}

/// The trial schedule plus the virtual hand's stream.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualSession {
    pub catalog: Vec<MovementSpec>,
    pub timing: TrialTimingParams,
    pub trials: Vec<TrialRecord>,
    pub stream: KinematicStream,
}

impl VirtualSession {
    pub fn duration(&self) -> f64 {
        self.stream.len() as f64 / f64::from(FRAME_RATE_HZ)
    }

    pub fn baseline_rest_window(&self) -> [f64; 2] {
        [0.0, self.timing.initial_rest]
    }
}

/// Total session length for a catalog: initial rest, then every trial
/// followed by one intertrial interval.
pub fn session_duration(catalog_len: usize, timing: &TrialTimingParams) -> f64 {
    let trials = (catalog_len * timing.trials_per_movement as usize) as f64;
    timing.initial_rest + trials * (timing.trial_duration() + timing.iti)
}

/// Builds the schedule (catalog order, all repetitions of one movement
/// back to back) and samples the virtual hand at 30 Hz.
pub fn generate_virtual_stream(catalog: &[MovementSpec], timing: &TrialTimingParams) -> Result<VirtualSession> {
    if catalog.is_empty() {
        return Err(Error::invalid("catalog", "catalog is empty"));
    }
    for m in catalog {
        m.validate()?;
    }
    timing.validate()?;

    let rate = f64::from(FRAME_RATE_HZ);
    let to_frames = |s: f64| libm::round(s * rate) as usize;
    let rest_frames = to_frames(timing.initial_rest);
    let trial_frames = to_frames(timing.trial_duration());
    let iti_frames = to_frames(timing.iti);
    let period = trial_frames + iti_frames;
    let n_trials = catalog.len() * timing.trials_per_movement as usize;
    let n_frames = to_frames(session_duration(catalog.len(), timing));

    let mut trials = Vec::with_capacity(n_trials);
    let mut angles = vec![[0.0f32; NUM_DOFS]; n_frames];
    for (movement, spec) in catalog.iter().enumerate() {
        let signs = spec.target_signs();
        for rep in 0..timing.trials_per_movement {
            let k = trials.len();
            let start = rest_frames + k * period;
            let end = start + trial_frames;
            trials.push(TrialRecord {
                movement,
                trial_index: rep,
                t_start: frame_time(start),
                t_end: frame_time(end),
                preceding_iti: [frame_time(start - iti_frames), frame_time(start)],
            });
            for (offset, frame) in angles[start..=end].iter_mut().enumerate() {
                let p = profile_or_zero(frame_time(offset), timing, spec.peak_amplitude);
                for (a, s) in frame.iter_mut().zip(signs) {
                    if s != 0.0 && p != 0.0 {
                        *a = (s * p) as f32;
                    }
                }
            }
        }
    }

    Ok(VirtualSession {
        catalog: catalog.to_vec(),
        timing: *timing,
        trials,
        stream: KinematicStream::from_angles(StreamSource::Virtual, angles),
    })
}
