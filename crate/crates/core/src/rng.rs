//! Deterministic random substreams.
//!
//! Every random draw of a trial comes from a ChaCha8 stream keyed by
//! `(master seed, trial)` with a stream id naming its purpose and the
//! `(user, rrh)` pair it feeds. Trials can therefore run in any order, on any
//! number of workers, and still produce bit-identical channels.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    UserPlacement = 1,
    Shadowing = 2,
    Fading = 3,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Source of the substreams of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialStreams {
    pub master_seed: u64,
    pub trial: u64,
}

impl TrialStreams {
    pub fn new(master_seed: u64, trial: u64) -> Self {
        Self { master_seed, trial }
    }

    pub fn stream(&self, purpose: Purpose, user: usize, rrh: usize) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut state = splitmix64(self.master_seed);
        for (i, chunk) in key.chunks_exact_mut(8).enumerate() {
            state = splitmix64(state ^ self.trial.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ i as u64);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        let id = ((purpose as u64) << 56) | ((user as u64 & 0xff_ffff) << 24) | (rrh as u64 & 0xff_ffff);
        rng.set_stream(id);
        rng
    }
}
