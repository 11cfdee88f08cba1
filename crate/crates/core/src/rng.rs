//! Per-frame random streams.
//!
//! Every random draw in the pipeline comes from a ChaCha8 generator keyed by
//! `(seed, purpose)` and positioned on stream `index`. ChaCha is a
//! counter-mode cipher, so stream `index` of a key is a pure function of the
//! triple and frames can be generated in any order or on any thread.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    PairSource,
    Speckle,
    Detector,
    ReferencePoints,
    Bootstrap,
    Auxiliary(u32),
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::PairSource => 0x5041_4952,
            Purpose::Speckle => 0x5350_4543,
            Purpose::Detector => 0x4445_5445,
            Purpose::ReferencePoints => 0x5245_4650,
            Purpose::Bootstrap => 0x424f_4f54,
            Purpose::Auxiliary(k) => 0x4155_5800_0000_0000 | k as u64,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for stream `index` of `(seed, purpose)`.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> StreamRng {
    let mut key = [0u8; 32];
    let mut state = seed ^ splitmix64(purpose.tag());
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
