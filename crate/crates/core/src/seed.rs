//! Seed splitting.
//!
//! All randomness in a run flows from one master seed. A sub-stream is
//! identified by `(master, index, purpose)`; the three are folded through
//! SplitMix64 so neighbouring indices give unrelated streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the purpose tag.
fn tag_hash(tag: &str) -> u64 {
    tag.bytes().fold(0xCBF2_9CE4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

pub fn derive_seed(master: u64, index: u64, purpose: &str) -> u64 {
    let a = splitmix64(master);
    let b = splitmix64(a ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    splitmix64(b ^ tag_hash(purpose))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn derive_rng(master: u64, index: u64, purpose: &str) -> Rng {
    rng_from_seed(derive_seed(master, index, purpose))
}

/// Index drawn from a discrete distribution given by nonnegative `weights`
/// summing to one (up to rounding; the last positive entry absorbs it).
pub(crate) fn sample_categorical<R: rand::Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last = i;
            acc += w;
            if u < acc {
                return i;
            }
        }
    }
    last
}
