//! Seed splitting.
//!
//! Every random draw comes from a ChaCha8 stream keyed by a 64-bit seed and
//! addressed by `(purpose, index)`, so a single trial or channel can be
//! regenerated without replaying anything else.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a random stream is used for. The discriminant becomes the high half
/// of the ChaCha stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Purpose {
    TrialKinematics = 1,
    Drift = 2,
    TrueTrackerNoise = 3,
    ContralateralTrackerNoise = 4,
    Mirror = 5,
    MirrorRestOffset = 6,
    EmgChannel = 7,
    Split = 8,
    CouplingSign = 9,
}

/// Index used for draws that do not belong to any trial (the baseline rest).
pub const BASELINE_INDEX: u32 = u32::MAX;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent child seed, e.g. one per participant.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    mix64(mix64(parent) ^ mix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn stream(seed: u64, purpose: Purpose, index: u32) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut state = seed;
    for chunk in key.chunks_exact_mut(8) {
        state = mix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream((u64::from(purpose as u32) << 32) | u64::from(index));
    rng
}
