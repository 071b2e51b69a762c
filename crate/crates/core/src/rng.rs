//! Named, independent seed streams.
//!
//! Every source of randomness in a run draws from `stream(base, name, index)`
//! so that, for example, changing the dropout stream never perturbs the
//! shuffle order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const INIT: &str = "init";
pub const ALPHA: &str = "alpha";
pub const SHUFFLE: &str = "data-shuffle";
pub const AUGMENT: &str = "augment";
pub const DROPOUT: &str = "dropout";
pub const SYNTH: &str = "synth";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for item `index` of stream `name` under the run seed `base`.
pub fn derive_seed(base: u64, name: &str, index: u64) -> u64 {
    // FNV-1a over the stream name
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(splitmix64(base ^ h).wrapping_add(index))
}

pub fn stream(base: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, name, index))
}
