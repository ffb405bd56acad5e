//! Seed plumbing. Every random stream in the crate is a ChaCha8 generator seeded
//! from a named base seed mixed with a tuple of stream coordinates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with stream coordinates (epoch, batch index, domain, ...).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix(base), |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn rng_from(base: u64, parts: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(base, parts))
}
