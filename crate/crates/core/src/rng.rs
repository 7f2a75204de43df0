//! Counter-based RNG substreams.
//!
//! Every random draw in the library comes from a ChaCha8 generator whose seed
//! is derived from a master seed and a path of integer keys (purpose,
//! iteration, block, ...). Two streams with different key paths are
//! independent, and a stream never depends on how work was scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for top-level substreams.
pub mod purpose {
    pub const SIMULATION: u64 = 1;
    pub const E_STEP_A: u64 = 2;
    pub const E_STEP_F: u64 = 3;
    pub const RESAMPLE: u64 = 4;
    pub const BOOTSTRAP: u64 = 5;
    pub const HELLINGER: u64 = 6;
    pub const REPLICATE: u64 = 7;
    pub const DIAGNOSTICS: u64 = 8;
    pub const SHUFFLE: u64 = 9;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A node in the tree of substreams. Cheap to copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedPath {
    key: u64,
}

impl SeedPath {
    pub fn new(master_seed: u64) -> Self {
        let mut s = master_seed ^ 0x6A09_E667_F3BC_C908;
        Self {
            key: splitmix64(&mut s),
        }
    }

    /// Derive the child stream identified by `index`.
    pub fn child(self, index: u64) -> Self {
        let mut s = self.key ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93);
        splitmix64(&mut s);
        Self {
            key: splitmix64(&mut s),
        }
    }

    pub fn child2(self, a: u64, b: u64) -> Self {
        self.child(a).child(b)
    }

    pub fn rng(self) -> ChaCha8Rng {
        let mut s = self.key;
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }

    pub fn key(self) -> u64 {
        self.key
    }
}
