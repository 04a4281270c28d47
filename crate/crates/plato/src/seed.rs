//! Counter-based sub-seed derivation.
//!
//! Every command takes a single master seed. Components that need their own
//! random stream derive it with [`derive`], which mixes the master seed, a
//! stable 64-bit tag for the stream (FNV-1a of a short ASCII label) and an
//! integer counter through SplitMix64. Nothing here depends on
//! `std::hash`, so sub-seeds are stable across compiler and library versions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random generator used everywhere in the crate.
pub type Rng = ChaCha8Rng;

/// One SplitMix64 output step.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the bytes of `label`.
pub fn tag(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Sub-seed for stream `label`, occurrence `counter`, under `master`.
pub fn derive(master: u64, label: &str, counter: u64) -> u64 {
    splitmix64(splitmix64(master ^ tag(label)).wrapping_add(splitmix64(counter)))
}

/// Generator seeded from a derived sub-seed.
pub fn rng(master: u64, label: &str, counter: u64) -> Rng {
    Rng::seed_from_u64(derive(master, label, counter))
}

/// Generator seeded directly.
pub fn rng_from(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
