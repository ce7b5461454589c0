//! Seeded randomness. Every stochastic routine takes a caller-owned
//! [`DebateRng`]; nothing reads global entropy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type DebateRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> DebateRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream seed from a base seed and a path of
/// counters (epoch, batch, item, ...). Uses the splitmix64 finalizer.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut state = mix(base ^ 0x9e37_79b9_7f4a_7c15);
    for &p in path {
        state = mix(state.wrapping_add(mix(p.wrapping_add(0x6a09_e667_f3bc_c909))));
    }
    state
}

pub fn derived(base: u64, path: &[u64]) -> DebateRng {
    seeded(derive_seed(base, path))
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
