//! Seed derivation: every random stream is a function of (global seed, role, iteration).
//!
//! `derive(seed, role, it) = splitmix64(seed ^ fnv1a(role) ^ splitmix64(it))`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(global: u64, role: &str, iteration: u64) -> u64 {
    splitmix64(global ^ fnv1a(role.as_bytes()) ^ splitmix64(iteration))
}

pub fn rng(global: u64, role: &str, iteration: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(global, role, iteration))
}
