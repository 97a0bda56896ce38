//! Joint-angle conventions and kinematic streams.
//!
//! Angles are normalized per DOF to `[-1, +1]`: the resting posture maps to
//! 0, the ends of the range of motion map to ±1. Deviations are reported as
//! a percentage of the full span (2 normalized units).

use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, FRAME_RATE_HZ, NUM_DOFS};

/// The eight tracked joint angles, in their fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DofId {
    /// D1 abduction (+) / adduction (−).
    ThumbAbduction,
    /// D1 flexion (+) / extension (−).
    ThumbFlexion,
    /// D2 flexion / extension.
    IndexFlexion,
    /// D3 flexion / extension.
    MiddleFlexion,
    /// D4 flexion / extension.
    RingFlexion,
    /// D5 flexion / extension.
    LittleFlexion,
    /// Wrist flexion / extension.
    WristFlexion,
    /// Wrist pronation (+) / supination (−).
    WristPronation,
}

impl DofId {
    pub const ALL: [DofId; NUM_DOFS] = [
        DofId::ThumbAbduction,
        DofId::ThumbFlexion,
        DofId::IndexFlexion,
        DofId::MiddleFlexion,
        DofId::RingFlexion,
        DofId::LittleFlexion,
        DofId::WristFlexion,
        DofId::WristPronation,
    ];

    pub const fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<DofId> {
        Self::ALL.get(index).copied()
    }

    pub const fn name(self) -> &'static str {
        match self {
            DofId::ThumbAbduction => "D1 abduction/adduction",
            DofId::ThumbFlexion => "D1 flexion/extension",
            DofId::IndexFlexion => "D2 flexion/extension",
            DofId::MiddleFlexion => "D3 flexion/extension",
            DofId::RingFlexion => "D4 flexion/extension",
            DofId::LittleFlexion => "D5 flexion/extension",
            DofId::WristFlexion => "wrist flexion/extension",
            DofId::WristPronation => "wrist pronation/supination",
        }
    }
}

impl fmt::Display for DofId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which hand (or the virtual hand) a stream was recorded from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamSource {
    True,
    Contralateral,
    Virtual,
}

impl StreamSource {
    pub const ALL: [StreamSource; 3] = [StreamSource::True, StreamSource::Contralateral, StreamSource::Virtual];

    pub const fn as_str(self) -> &'static str {
        match self {
            StreamSource::True => "true",
            StreamSource::Contralateral => "contralateral",
            StreamSource::Virtual => "virtual",
        }
    }
}

/// Result of [`normalize_angle`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedAngle {
    pub value: f64,
    /// Set when the raw angle fell outside the range of motion and was clamped.
    pub clamped: bool,
}

fn check_rom(rom: (f64, f64), rest_deg: f64) -> Result<()> {
    let (min_deg, max_deg) = rom;
    if !(min_deg < rest_deg && rest_deg < max_deg) {
        return Err(Error::invalid("rom", "expected min < rest < max"));
    }
    Ok(())
}

/// Maps a raw angle in degrees to the normalized `[-1, 1]` scale.
///
/// Piecewise linear: `rest_deg → 0`, `max_deg → +1`, `min_deg → −1`.
pub fn normalize_angle(raw_deg: f64, rom: (f64, f64), rest_deg: f64) -> Result<NormalizedAngle> {
    check_rom(rom, rest_deg)?;
    let (min_deg, max_deg) = rom;
    let clamped = raw_deg < min_deg || raw_deg > max_deg;
    let raw = raw_deg.clamp(min_deg, max_deg);
    let value = if raw >= rest_deg {
        (raw - rest_deg) / (max_deg - rest_deg)
    } else {
        (raw - rest_deg) / (rest_deg - min_deg)
    };
    Ok(NormalizedAngle { value, clamped })
}

/// Inverse of [`normalize_angle`] for values in `[-1, 1]`.
pub fn denormalize_angle(value: f64, rom: (f64, f64), rest_deg: f64) -> Result<f64> {
    check_rom(rom, rest_deg)?;
    let (min_deg, max_deg) = rom;
    let v = value.clamp(-1.0, 1.0);
    Ok(if v >= 0.0 {
        rest_deg + v * (max_deg - rest_deg)
    } else {
        rest_deg + v * (rest_deg - min_deg)
    })
}

/// Distance between two normalized positions as a percentage of the full
/// span (2 normalized units).
#[inline]
pub fn deviation_percent(pos: f64, rest: f64) -> f64 {
    libm::fabs(pos - rest) * 50.0
}

/// Converts a deviation in normalized units to percent of span.
#[inline]
pub fn to_percent_of_span(normalized: f64) -> f64 {
    normalized * 50.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicFrame {
    /// Seconds from session start.
    pub t: f64,
    pub angles: [f32; NUM_DOFS],
}

impl KinematicFrame {
    #[inline]
    pub fn angle(&self, dof: usize) -> f64 {
        f64::from(self.angles[dof])
    }
}

/// A 30 Hz sequence of frames from one source.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicStream {
    pub source: StreamSource,
    pub frames: Vec<KinematicFrame>,
}

impl KinematicStream {
    /// Builds a stream on the grid `t_i = i / 30`.
    pub fn from_angles(source: StreamSource, angles: Vec<[f32; NUM_DOFS]>) -> Self {
        let frames = angles
            .into_iter()
            .enumerate()
            .map(|(i, angles)| KinematicFrame {
                t: frame_time(i),
                angles,
            })
            .collect();
        KinematicStream { source, frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn start_time(&self) -> f64 {
        self.frames.first().map_or(0.0, |f| f.t)
    }

    /// Frame index nearest to time `t`, relative to this stream's first frame.
    pub fn index_of(&self, t: f64) -> isize {
        libm::round((t - self.start_time()) * f64::from(FRAME_RATE_HZ)) as isize
    }

    /// Frame index range `[start, end)` covering `[t0, t1)`, clipped to the stream.
    pub fn index_range(&self, t0: f64, t1: f64) -> core::ops::Range<usize> {
        let n = self.len() as isize;
        let a = self.index_of(t0).clamp(0, n) as usize;
        let b = self.index_of(t1).clamp(0, n) as usize;
        a..b.max(a)
    }

    pub fn dof_trace(&self, dof: usize) -> Vec<f64> {
        self.frames.iter().map(|f| f.angle(dof)).collect()
    }

    /// Checks the frame-grid and range invariants.
    pub fn validate(&self) -> Result<()> {
        let period = 1.0 / f64::from(FRAME_RATE_HZ);
        for w in self.frames.windows(2) {
            let dt = w[1].t - w[0].t;
            if !(dt > 0.0) || libm::fabs(dt - period) > 1e-6 {
                return Err(Error::invalid("frames", "timestamps must advance by exactly 1/30 s"));
            }
        }
        for f in &self.frames {
            if f.angles.iter().any(|a| !a.is_finite() || a.abs() > 1.0) {
                return Err(Error::invalid("frames", "angles must be finite and within [-1, 1]"));
            }
        }
        Ok(())
    }
}

/// Time of frame `i` on the session grid.
#[inline]
pub fn frame_time(i: usize) -> f64 {
    i as f64 / f64::from(FRAME_RATE_HZ)
}
