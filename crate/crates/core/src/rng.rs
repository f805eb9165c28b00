//! Named, seedable, splittable random streams.
//!
//! Every stochastic choice in the crate draws from a [`Stream`] derived from a
//! run seed and a fixed purpose label. The algorithm is fully specified so the
//! same streams can be reproduced outside this crate:
//!
//! * key = SHA-256(`"softdistill/stream/v1"` ‖ seed as u64 LE ‖ index as u64 LE ‖ label bytes)
//! * generator = ChaCha20 keyed with that 32-byte key, stream 0, word position 0
//! * `next_u64` = two consecutive little-endian 32-bit keystream words, low word first
//! * uniform in [0, 1) = `(next_u64 >> 11) * 2^-53`
//! * uniform in (0, 1) = `((next_u64 >> 11) + 0.5) * 2^-53`
//! * standard normal = Box–Muller cosine branch, `sqrt(-2 ln u1) * cos(2π u2)` with u1, u2 in (0, 1)
//! * integer below n = rejection sampling of `next_u64` against the largest multiple of n
//! * shuffle = Fisher–Yates from the last index down

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

const DOMAIN: &[u8] = b"softdistill/stream/v1";
const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

/// Derives the 32-byte key for the stream `(seed, label, index)`.
pub fn stream_key(seed: u64, label: &str, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(DOMAIN);
    h.update(seed.to_le_bytes());
    h.update(index.to_le_bytes());
    h.update(label.as_bytes());
    h.finalize().into()
}

/// Serializable position of a [`Stream`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamState {
    pub key: [u8; 32],
    pub word_pos: u128,
}

#[derive(Debug, Clone)]
pub struct Stream {
    key: [u8; 32],
    rng: ChaCha20Rng,
}

impl Stream {
    pub fn new(seed: u64, label: &str) -> Self {
        Self::indexed(seed, label, 0)
    }

    pub fn indexed(seed: u64, label: &str, index: u64) -> Self {
        let key = stream_key(seed, label, index);
        Self {
            key,
            rng: ChaCha20Rng::from_seed(key),
        }
    }

    pub fn state(&self) -> StreamState {
        StreamState {
            key: self.key,
            word_pos: self.rng.get_word_pos(),
        }
    }

    pub fn from_state(state: StreamState) -> Self {
        let mut rng = ChaCha20Rng::from_seed(state.key);
        rng.set_word_pos(state.word_pos);
        Self { key: state.key, rng }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_M53
    }

    /// Uniform in (0, 1).
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * TWO_POW_M53
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform_open();
        let u2 = self.uniform_open();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in `[0, n)`. Panics if `n == 0`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}
