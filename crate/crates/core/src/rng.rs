//! Seeded random streams.
//!
//! All randomness goes through ChaCha8 (`rand_chacha::ChaCha8Rng`). A stream
//! is identified by `(seed, domain, index)`: the seed and a domain tag are
//! mixed with SplitMix64 into the ChaCha key, and `index` selects the ChaCha
//! stream. Each draw of a sampler owns one stream, so results do not depend
//! on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags separating independent uses of the same user seed.
pub mod domain {
    pub const SAMPLE: u64 = 0x5341_4d50;
    pub const NOISE: u64 = 0x4e4f_4953;
    pub const PERTURBATION: u64 = 0x5045_5254;
    pub const PROBE: u64 = 0x5052_4f42;
    pub const STEIN: u64 = 0x5354_4549;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream `index` within `domain` for the user seed `seed`.
pub fn substream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let key = splitmix64(seed ^ splitmix64(domain));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}
