//! Root-seed derived random streams.
//!
//! Every component draws from its own named stream so that, for example,
//! changing the sampler does not perturb curation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const CURATION: &str = "curation";
pub const INIT: &str = "init";
pub const TRAINING: &str = "training";
pub const SAMPLING: &str = "sampling";

fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic generator for the stream `name` under `root`.
pub fn substream(root: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(fnv1a(name));
    rng
}

/// A child stream indexed by `index` under a named stream, e.g. one per clip.
pub fn indexed_substream(root: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(fnv1a(name));
    rng
}
