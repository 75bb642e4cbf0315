//! Stable seed derivation.
//!
//! Every random stream in a study is keyed off the master seed through
//! [`derive_seed`], so adding a sample or a model kind never shifts the seeds
//! of existing experiments. The mixer is SplitMix64, which is fixed across
//! platforms and releases (unlike `std`'s hashers).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used everywhere in the crate.
pub type StudyRng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of stream keys into `master`.
pub fn derive_seed(master: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(master), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

/// Stable 64-bit tag for a short ASCII label (FNV-1a).
pub fn label_key(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

pub fn rng_from_seed(seed: u64) -> StudyRng {
    StudyRng::seed_from_u64(seed)
}
