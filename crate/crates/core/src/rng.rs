//! Counter-based RNG streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed by
//! `(master seed, stream id)`, so results never depend on which worker
//! thread did the work or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids are namespaced per purpose so, for example, tree 3 and
/// synthetic row 3 never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Tree = 1,
    Undersample = 2,
    Smote = 3,
    Split = 4,
    Background = 5,
    Generator = 6,
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 56) ^ index);
    rng
}
