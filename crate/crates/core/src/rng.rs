//! Seed derivation for every random stream in the pipeline.
//!
//! All randomness comes from [`ChaCha8Rng`]. Child seeds are derived from a
//! parent seed and a path of integer labels with a SplitMix64 finalizer, so a
//! stream is identified by *what it is for* rather than by the order in which
//! work was scheduled:
//!
//! | stream                       | derivation                                         |
//! |------------------------------|----------------------------------------------------|
//! | band `b` of a dataset set    | `derive(master, [BAND, b])`                        |
//! | feature `f` inside a band    | `ChaCha8(band_seed)` with stream id `f`            |
//! | search stage `s` of band `b` | `derive(derive(master, [SEARCH, b]), [STAGE, s])`  |
//! | replication `r` at `N`       | `derive(stage_seed, [N, r])`                       |
//! | sampled impostor pairs       | `ChaCha8(policy_seed)` stream 0                    |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const BAND: u64 = 0x4241_4e44;
pub const SEARCH: u64 = 0x5345_4152;
pub const STAGE: u64 = 0x5354_4147;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `parent` and a label path.
pub fn derive_seed(parent: u64, labels: &[u64]) -> u64 {
    labels.iter().fold(splitmix64(parent), |acc, &label| {
        splitmix64(acc ^ splitmix64(label.wrapping_add(0xD1B5_4A32_D192_ED03)))
    })
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
