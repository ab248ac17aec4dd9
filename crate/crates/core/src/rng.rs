//! Counter-based random streams. Every draw is keyed by
//! `(seed, stream, iteration, index)`, so the value of a draw never depends on
//! which thread produced it or in which order draws were requested.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identifies one independent random stream, usually one optimizer run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub stream: u64,
}

impl StreamKey {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Generator for draw `index` of `iteration`.
    pub fn rng(&self, iteration: u64, index: u64) -> ChaCha8Rng {
        let mut state = splitmix64(self.seed ^ 0x6a09_e667_f3bc_c908);
        let mut key = [0u8; 32];
        for (chunk, word) in key.chunks_exact_mut(8).zip([self.stream, iteration, index, 0x243f_6a88_85a3_08d3]) {
            state = splitmix64(state ^ word);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }
}

/// Stable 64-bit identifier for a label (FNV-1a), used to give each method its
/// own stream independent of its position in a config.
pub fn stream_id(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
