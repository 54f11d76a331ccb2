//! ETA prediction toolkit.
//!
//! Predicts trip travel time (ATA) from the realized link/cross sequence of
//! an order plus engineered tabular features. Two regressor families are
//! trained on the same data — a 1-D convolutional sequence network and a
//! first-order gradient-boosted tree with MAE loss — and their predictions
//! are fused by a two-stage weighted ensemble whose weights are fitted on a
//! validation split.
//!
//! The crate ships a synthetic data generator with a documented ground-truth
//! travel-time function so the learning components can be validated end to
//! end without any proprietary trip data.

pub mod config;
pub mod ensemble;
pub mod features;
pub mod fsutil;
pub mod gbdt;
pub mod pipeline;
pub mod seqcnn;
pub mod synth;
pub mod trip;

/// Sentinel for a missing value in tabular features and categorical history.
pub const MISSING: f64 = -999.0;

/// Stable 64-bit mix used to derive per-purpose RNG seeds from one base seed.
///
/// FNV-1a over the tag bytes, folded with the base seed. Never depends on
/// process state, so derived seeds are identical across runs and platforms.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ base.rotate_left(17);
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // final avalanche (splitmix64 tail)
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}
