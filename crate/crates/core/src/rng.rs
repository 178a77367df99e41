//! Seeded pseudo-random numbers with a fully specified state transition.
//!
//! Every random decision in the crate (weight init, batch shuffles, k-means
//! seeding, sample picks) draws from [`XorShift64Star`], so orderings can be
//! reproduced by any other implementation that follows the recipe below:
//!
//! * **Stream derivation.** A `(seed, stream)` pair maps to the initial state
//!   `splitmix64(seed ^ splitmix64(stream))`. A zero result is replaced by
//!   `0x9E37_79B9_7F4A_7C15` since xorshift state must be non-zero.
//! * **Transition.** `x ^= x >> 12; x ^= x << 25; x ^= x >> 27`, output
//!   `x * 0x2545_F491_4F6C_DD1D` (wrapping).
//! * **Bounded index.** `below(n) = (next_u64() as u128 * n as u128) >> 64`.
//! * **Unit float.** `(next_u64() >> 11) * 2^-53`, uniform in `[0, 1)`.
//! * **Shuffle.** Fisher–Yates from the back: for `i` in `(1..n).rev()`,
//!   swap `i` with `below(i + 1)`.

use rand_core::RngCore;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// One step of the splitmix64 finalizer, used for seeding.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream identifiers so that independent consumers of one seed never share
/// a sequence.
pub mod stream {
    pub const WEIGHT_INIT: u64 = 1;
    pub const SAMPLE_PICK: u64 = 2;
    /// k-means restart `r` uses `KMEANS_BASE + r`.
    pub const KMEANS_BASE: u64 = 1 << 16;
    /// Batch shuffles use `SHUFFLE_BASE + epoch`.
    pub const SHUFFLE_BASE: u64 = 1 << 32;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XorShift64Star {
    state: u64,
}

impl XorShift64Star {
    pub fn new(seed: u64, stream: u64) -> Self {
        let state = splitmix64(seed ^ splitmix64(stream));
        Self {
            state: if state == 0 { GOLDEN_GAMMA } else { state },
        }
    }

    #[inline]
    pub fn next(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Uniform index in `0..n`. `n` must be non-zero.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next() as u128 * n as u128) >> 64) as usize
    }

    /// Uniform float in `[0, 1)`.
    #[inline]
    pub fn unit(&mut self) -> f64 {
        (self.next() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// A random permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}

impl RngCore for XorShift64Star {
    fn next_u32(&mut self) -> u32 {
        (self.next() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.next()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}
