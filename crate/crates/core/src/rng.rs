//! Deterministic random number streams.
//!
//! Every stochastic routine in the crate draws from a [`ChaCha8Rng`] derived
//! from a master seed and a short path of stream identifiers. Derivation is a
//! pure function of `(seed, path)`, so results never depend on scheduling or
//! on how many worker threads execute a loop: each unit of work derives its
//! own generator up front.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 step; used only to expand seeds, never as the user-facing RNG.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent generator for the given stream path.
///
/// The path is mixed into the seed material element by element, so
/// `substream(s, &[1])` and `substream(s, &[1, 0])` are unrelated streams.
pub fn substream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut state = seed ^ 0x6a09_e667_f3bc_c908;
    let mut key = [0u8; 32];
    // Absorb the path, separating levels so [1, 2] and [12] cannot collide.
    for (depth, id) in path.iter().enumerate() {
        state ^= splitmix64(&mut state) ^ id.wrapping_mul(0x2545_f491_4f6c_dd1d);
        state = state.wrapping_add((depth as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let _ = splitmix64(&mut state);
    }
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
