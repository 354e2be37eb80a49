//! Keyed, stateless random number generation.
//!
//! Every draw in the sampler is addressed by `(seed, iteration, stream,
//! index, counter)`. Two calls with the same key produce bitwise-identical
//! output no matter which thread or node makes them, which is what makes the
//! sampled chain invariant to worker and node counts.

use rand::RngCore;

/// Logical sub-streams of one run. The discriminants are part of the chain
/// encoding: changing them changes every sampled value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Stream {
    SplitShuffle = 0,
    InitMovie = 1,
    InitUser = 2,
    HyperMovie = 3,
    HyperUser = 4,
    UpdateMovie = 5,
    UpdateUser = 6,
    Calibration = 7,
    Fixture = 8,
    Synthetic = 9,
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer. Full-avalanche 64-bit mix.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based generator for one `(seed, iteration, stream, index)` key.
///
/// The generator holds no entropy pool; output `i` is a pure function of the
/// key and `i`. Replaying a key replays the exact sequence.
#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64, iteration: u64, stream: Stream, index: u64) -> Self {
        let mut key = mix64(seed ^ GOLDEN);
        key = mix64(key ^ iteration.wrapping_mul(GOLDEN));
        key = mix64(key ^ (stream as u64).wrapping_mul(0xd6e8_feb8_6659_fd93));
        key = mix64(key ^ index.wrapping_mul(0xa076_1d64_78bd_642f));
        CounterRng { key, counter: 0 }
    }

    /// Draws consumed so far on this key.
    pub fn draws(&self) -> u64 {
        self.counter
    }
}

impl RngCore for CounterRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        let out = mix64(self.key ^ self.counter.wrapping_mul(GOLDEN));
        self.counter += 1;
        out
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        let mut chunks = dest.chunks_exact_mut(8);
        for chunk in &mut chunks {
            chunk.copy_from_slice(&self.next_u64().to_le_bytes());
        }
        let rem = chunks.into_remainder();
        if !rem.is_empty() {
            let last = self.next_u64().to_le_bytes();
            rem.copy_from_slice(&last[..rem.len()]);
        }
    }
}
