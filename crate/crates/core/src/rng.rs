//! Seeded random streams.
//!
//! Every stochastic operation takes an explicit seed. A seed names a family of
//! independent ChaCha8 streams; `stream(seed, k)` selects the k-th one, so
//! sub-tasks (shuffles, initialisation, per-element test sets) can be derived
//! without sharing generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream identifiers used inside the library. Keeping them in one place
/// prevents two consumers of the same seed from drawing correlated numbers.
pub mod streams {
    pub const SAMPLE: u64 = 1;
    pub const BALANCE: u64 = 2;
    pub const LABELS: u64 = 3;
    pub const FEATURES: u64 = 4;
    pub const INIT: u64 = 5;
    pub const SHUFFLE: u64 = 6;
    pub const PROBE: u64 = 7;
    pub const CPT: u64 = 8;
    pub const RESAMPLE: u64 = 9;
    /// Base for per-element derived streams (`ELEMENT + index`).
    pub const ELEMENT: u64 = 1 << 32;
}

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derive a child seed from `(seed, index)`; used when a whole sub-computation
/// (for instance one test set of a grid) needs its own seed family.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finaliser over the pair
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
