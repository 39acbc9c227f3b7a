//! Counter-style seeding. Every random stream in the crate is addressed by a
//! `(seed, purpose, index)` triple so results never depend on which worker
//! happens to draw first.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags keep streams for different consumers disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Noise = 0x6e6f_6973_6500,
    Path = 0x7061_7468_7300,
    Simplex = 0x7369_6d70_6c00,
    Bootstrap = 0x626f_6f74_7300,
    Test = 0x7465_7374_7300,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a base seed with a purpose tag into a key for the stream cipher.
pub fn derive_seed(seed: u64, purpose: Stream) -> u64 {
    splitmix64(splitmix64(seed) ^ purpose as u64)
}

/// RNG for stream `index` of `(seed, purpose)`; independent of call order.
pub fn stream_rng(seed: u64, purpose: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose));
    rng.set_stream(index);
    rng
}
