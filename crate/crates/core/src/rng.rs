//! Keyed random streams, so a draw depends only on its logical position and
//! never on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A ChaCha stream determined by `seed` and a tuple of counters.
pub fn keyed_rng(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    for &k in keys {
        h = splitmix(h ^ splitmix(k.wrapping_add(0xA076_1D64_78BD_642F)));
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// A 64-bit seed derived from `seed` and counters, for nesting independent runs.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    let mut h = splitmix(seed ^ 0x5851_F42D_4C95_7F2D);
    for &k in keys {
        h = splitmix(h ^ splitmix(k));
    }
    h
}

pub(crate) const PARTICLE_DOMAIN: u64 = 1;
pub(crate) const RESAMPLE_DOMAIN: u64 = 2;
pub(crate) const RESTART_DOMAIN: u64 = 3;
