//! Seed derivation. Every random stream in the crate is a ChaCha8 stream
//! keyed by a 64-bit seed and selected by a stream id, so results match
//! across platforms and thread counts.
//!
//! Per-sample augmentation seeds are
//! `mix(mix(mix(mix(global) ^ fnv1a(patient)) ^ side) ^ epoch)` with
//! `mix` = SplitMix64 finalizer and `side` = 0 for left, 1 for right.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::labels::Side;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3))
}

pub fn sample_seed(global: u64, patient: &str, side: Side, epoch: u64) -> u64 {
    let side = match side {
        Side::Left => 0,
        Side::Right => 1,
    };
    let h = splitmix64(global);
    let h = splitmix64(h ^ fnv1a(patient.as_bytes()));
    let h = splitmix64(h ^ side);
    splitmix64(h ^ epoch)
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
