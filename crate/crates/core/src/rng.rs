//! Hierarchical, counter-based random streams.
//!
//! A [`RandomStream`] is a master seed plus a path of split indices. The
//! generator for a stream is a ChaCha8 keystream whose key is derived from the
//! full path, so the numbers a replica sees depend only on its path and never
//! on which worker ran it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomStream {
    pub master_seed: u64,
    pub path: Vec<u64>,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RandomStream {
    pub fn new(master_seed: u64) -> Self {
        Self {
            master_seed,
            path: Vec::new(),
        }
    }

    /// Child stream `index` of this stream.
    pub fn split(&self, index: u64) -> Self {
        let mut path = self.path.clone();
        path.push(index);
        Self {
            master_seed: self.master_seed,
            path,
        }
    }

    /// Convenience for a nested split along several indices.
    pub fn derive(&self, indices: &[u64]) -> Self {
        let mut path = self.path.clone();
        path.extend_from_slice(indices);
        Self {
            master_seed: self.master_seed,
            path,
        }
    }

    fn key(&self) -> [u8; 32] {
        // Length is mixed in so that [a] and [a, 0] never collide.
        let mut state = splitmix64(self.master_seed ^ 0x5EED_0F_F00D);
        state = splitmix64(state ^ (self.path.len() as u64).wrapping_mul(0xA24B_AED4_963E_E407));
        for &p in &self.path {
            state = splitmix64(state ^ splitmix64(p.wrapping_add(0x632B_E59B_D9B4_E019)));
        }
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        key
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> StreamRng {
        ChaCha8Rng::from_seed(self.key())
    }

    /// Short printable identifier, e.g. `42/3/0/17`.
    pub fn id(&self) -> String {
        let mut s = self.master_seed.to_string();
        for p in &self.path {
            s.push('/');
            s.push_str(&p.to_string());
        }
        s
    }
}
