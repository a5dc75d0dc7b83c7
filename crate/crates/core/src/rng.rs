//! Seeded random streams.
//!
//! Each (run seed, cell, iteration, sampler) tuple gets its own ChaCha8
//! stream, so results do not depend on the order cells are processed in.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Which sampler consumes a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamKind {
    Initial = 1,
    Hotspot = 2,
    Stabilizing = 3,
    Anchor = 4,
    Synthetic = 5,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes the key parts into a 64-bit stream seed.
pub fn stream_seed(seed: u64, cell: u64, iteration: u64, kind: StreamKind) -> u64 {
    [cell, iteration, kind as u64]
        .iter()
        .fold(splitmix64(seed), |acc, part| splitmix64(acc ^ splitmix64(*part)))
}

pub fn stream(seed: u64, cell: u64, iteration: u64, kind: StreamKind) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, cell, iteration, kind))
}
