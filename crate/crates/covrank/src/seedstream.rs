//! Deterministic derivation of independent RNG streams.
//!
//! Every randomized routine in the crate draws from a `ChaCha8Rng` whose key
//! is derived from a user seed plus a fixed tag path. Streams with distinct
//! tag paths are independent, so parallel work items (bootstrap replicates,
//! benchmark repetitions, restarts) produce the same numbers no matter how
//! they are scheduled.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keeping unrelated consumers of the same user seed apart.
pub(crate) mod tag {
    pub const FIT_RESTART: u64 = 0x1;
    pub const SCREE_RANK: u64 = 0x2;
    pub const BOOT_REPLICATE: u64 = 0x3;
    pub const BOOT_FIT: u64 = 0x4;
    pub const SIM_DATA: u64 = 0x5;
    pub const BENCH_REP: u64 = 0x6;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a seed with a tag path into a single 64-bit value.
pub(crate) fn mix(seed: u64, tags: &[u64]) -> u64 {
    let mut state = seed ^ 0x6a09_e667_f3bc_c908;
    let mut out = splitmix64(&mut state);
    for &t in tags {
        state ^= t.wrapping_mul(0x2545_f491_4f6c_dd1d);
        out ^= splitmix64(&mut state);
    }
    out
}

/// A ChaCha8 stream keyed by `seed` and a tag path.
pub(crate) fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut state = mix(seed, tags);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
