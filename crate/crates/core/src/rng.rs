//! Seed derivation. Every random draw in the crate comes from a ChaCha stream
//! keyed by `(master seed, domain, index)`, so runs are reproducible and
//! independent trials never share state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A generator for stream `index` within `domain` of `master`.
pub fn stream_rng(master: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(master ^ splitmix64(domain)));
    rng.set_stream(index);
    rng
}

/// Domain tags used by the simulator.
pub mod domain {
    pub const ARRIVALS: u64 = 0;
    pub const GENERATOR: u64 = 1;
    /// Policy-internal draws for policy slot `k` live at `POLICY_BASE + 2k`,
    /// acceptance/occupation draws at `POLICY_BASE + 2k + 1`.
    pub const POLICY_BASE: u64 = 16;
}
