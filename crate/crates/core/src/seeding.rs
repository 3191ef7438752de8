//! Deterministic RNG stream derivation.
//!
//! Every random draw in the crate comes from a ChaCha8 stream derived from a
//! user-facing `u64` seed plus a list of domain words (a stream tag and
//! indices such as fold, epoch, or example). Identical inputs produce
//! identical streams on every platform, which is what makes training runs,
//! sampled targets, and attacks reproducible bit-for-bit.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags. Each call site passes one of these as the first stream word
/// so unrelated draws never share a stream.
pub mod stream {
    pub const MODEL_INIT: u64 = 1;
    pub const EPOCH_SHUFFLE: u64 = 2;
    pub const SAMPLED_TARGETS: u64 = 3;
    pub const MIXUP_LAMBDA: u64 = 4;
    pub const MIXUP_PAIRING: u64 = 5;
    pub const FOLD_SPLIT: u64 = 6;
    pub const FOLD_SEED: u64 = 7;
    pub const ATTACK_START: u64 = 8;
    pub const WORLD_MEANS: u64 = 9;
    pub const WORLD_DRAW: u64 = 11;
    pub const FIXTURE: u64 = 12;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix `seed` and `words` into a single 64-bit sub-seed.
pub fn derive_seed(seed: u64, words: &[u64]) -> u64 {
    let mut state = seed ^ 0xA076_1D64_78BD_642F;
    let mut acc = splitmix64(&mut state);
    for &w in words {
        state ^= w.wrapping_mul(0xE703_7ED1_A0B4_28DB);
        acc ^= splitmix64(&mut state);
    }
    acc
}

/// Derive an independent ChaCha8 stream from `seed` and `words`.
pub fn derive_rng(seed: u64, words: &[u64]) -> ChaCha8Rng {
    let mut state = derive_seed(seed, words);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
