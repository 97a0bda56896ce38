//! Simulation, feature extraction, Kalman decoding and statistics for
//! comparing mimicked and mirrored labeling of hand kinematics in
//! myoelectric decoder training data.
//!
//! The crate is `no_std` (it needs `alloc`). Everything that touches a
//! filesystem, a clock or a thread pool lives in the `mirrortrain` crate.
//!
//! Pipeline, in order:
//!
//! 1. [`protocol`] builds the movement catalog, the trial schedule and the
//!    deterministic Virtual stream.
//! 2. [`humansim`] derives the True and Contralateral streams by injecting
//!    coupling, drift, reaction delay, gain variation and mirror jitter.
//! 3. [`emgsim`] produces 32-channel 1 kHz EMG from the True stream.
//! 4. [`features`] computes 528 smoothed-MAV channels at 30 Hz.
//! 5. [`labeling`] aligns and splits mimicked / mirrored datasets.
//! 6. [`decoder`] fits and runs the Kalman decoder.
//! 7. [`analysis`] recovers the kinematic metrics and runs the statistics.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod decoder;
pub mod emgsim;
mod error;
pub mod features;
pub mod humansim;
pub mod kinematics;
pub mod labeling;
pub mod protocol;
pub mod rng;
pub mod session;
pub mod stats;

pub use error::{Error, Result};
pub use kinematics::{deviation_percent, normalize_angle, DofId, KinematicFrame, KinematicStream, StreamSource};
pub use session::{simulate_session, EmgBlock, SessionConfig, SessionDataset, TrialRecord};

/// Kinematic frame rate in Hz.
pub const FRAME_RATE_HZ: u32 = 30;
/// EMG sample rate in Hz.
pub const EMG_SAMPLE_RATE_HZ: u32 = 1000;
/// Number of single-ended EMG electrodes.
pub const EMG_CHANNELS: usize = 32;
/// Number of joint angles tracked per hand.
pub const NUM_DOFS: usize = 8;
