//! Order-independent random streams.
//!
//! Every random draw in a simulation comes from a ChaCha stream keyed by
//! `(seed, domain, index...)`. Streams never share state, so trials and UEs
//! can run in any order (or concurrently) and still reproduce bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains. Values are part of the reproducibility contract.
pub mod domain {
    pub const TRIAL: u64 = 0x7472_6961_6c00;
    pub const SCENARIO: u64 = 1;
    pub const RIS_CONFIG: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const MIS_SELECTION: u64 = 4;
    pub const OVERESTIMATE: u64 = 5;
    pub const SEPARATION: u64 = 6;
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a path of indices.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &x| splitmix64(acc ^ splitmix64(x)))
}

pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}
