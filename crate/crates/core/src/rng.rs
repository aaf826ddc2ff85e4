//! Seeded random substreams.
//!
//! Every random draw in the crate descends from one top-level seed. Each
//! consumer asks for its own named substream so that, for example, the noise
//! sequence of an episode does not shift when the scene generator draws one
//! more number.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named random substreams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Substream {
    Scene,
    Campaign,
    Noise,
    Bench,
}

impl Substream {
    fn stream_id(self) -> u64 {
        match self {
            Substream::Scene => 1,
            Substream::Campaign => 2,
            Substream::Noise => 3,
            Substream::Bench => 4,
        }
    }
}

/// Generator for `substream` of `seed`, further split by `index` (e.g. a
/// trajectory number).
pub fn substream(seed: u64, stream: Substream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream.stream_id());
    rng
}
