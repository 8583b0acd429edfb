//! Named random sub-streams derived from one root seed.
//!
//! Each consumer (data split, Gumbel noise, weight init, dropout) draws
//! from its own ChaCha stream so adding draws in one place never shifts
//! the numbers another consumer sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub const SPLIT: &str = "split";
pub const GUMBEL: &str = "gumbel";
pub const INIT: &str = "init";
pub const DROPOUT: &str = "dropout";
pub const DATA: &str = "data";

/// FNV-1a, used only to turn a stream name into a stream id.
fn stream_id(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn stream(seed: u64, name: &str) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(name));
    rng
}
