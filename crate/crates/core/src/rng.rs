//! Named, independent random streams derived from one master seed.
//!
//! Every consumer (room sampling, endpoint placement, sources, batches,
//! weight init, dropout, ...) draws from its own ChaCha stream, so adding
//! draws in one consumer never shifts the sequence seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Well-known stream identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Rooms,
    Placement,
    Sources,
    Pairing,
    Batches,
    Validation,
    Init,
    Dropout,
    Noise,
    Downstream,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Rooms => 1,
            Stream::Placement => 2,
            Stream::Sources => 3,
            Stream::Pairing => 4,
            Stream::Batches => 5,
            Stream::Validation => 6,
            Stream::Init => 7,
            Stream::Dropout => 8,
            Stream::Noise => 9,
            Stream::Downstream => 10,
        }
    }
}

/// Returns the random stream `stream` of the experiment seeded with `seed`.
pub fn stream(seed: u64, stream: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

/// Returns a sub-stream of `stream`, e.g. one per RIR or per grid cell.
pub fn substream(seed: u64, stream: Stream, index: u64) -> Rng {
    self::stream(derive_seed(seed, index), stream)
}

/// Mixes a seed with a label into a new seed (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
