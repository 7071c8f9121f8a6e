//! Counter-based random streams.
//!
//! Every random quantity is drawn from a ChaCha stream keyed by the master
//! seed, with the stream id packing a replicate id and a purpose tag. Results
//! therefore do not depend on scheduling or on the number of workers.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type StreamRng = ChaCha12Rng;

/// What a stream is used for. The tag keeps streams of one replicate apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    Sites = 1,
    Pilot = 2,
    Arrivals = 3,
    Normals = 4,
    TypicalCell = 5,
    Test = 6,
}

/// Stream for `(seed, replicate, purpose)`.
pub fn stream(seed: u64, replicate: u64, purpose: Purpose) -> StreamRng {
    assert!(
        replicate < 1 << 56,
        "replicate id {replicate} exceeds 56 bits"
    );
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream((replicate << 8) | purpose as u64);
    rng
}
