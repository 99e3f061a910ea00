//! Explicitly specified pseudo-random source so fixtures can be reproduced
//! in other languages.
//!
//! * Generator: xoshiro256** (Blackman & Vigna), state seeded by SplitMix64.
//! * Streams: the seed of stream `(seed, i_1, ..., i_k)` is
//!   `key_0 = seed`, `key_r = mix(key_{r-1} + GOLDEN + mix(i_r + r))`,
//!   where `mix` is the SplitMix64 finalizer and arithmetic wraps.
//! * Uniform `[0,1)`: top 53 bits of the output times `2^-53`.
//! * Normal: Box–Muller cosine branch, `u1` drawn on `(0,1]`, one output
//!   per two uniforms.
//! * Bounded integer: `lo + ((next_u64 as u128 * span) >> 64)`.

use rand_core::RngCore;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Xoshiro256 {
    s: [u64; 4],
}

impl Xoshiro256 {
    pub fn seed_from_u64(seed: u64) -> Self {
        let mut x = seed;
        let mut s = [0u64; 4];
        for word in &mut s {
            x = x.wrapping_add(GOLDEN);
            *word = mix(x);
        }
        Xoshiro256 { s }
    }

    /// Independent stream for a tuple of indices, e.g. (replicate, study, trial).
    pub fn stream(seed: u64, indices: &[u64]) -> Self {
        let mut key = seed;
        for (r, &i) in indices.iter().enumerate() {
            key = mix(key.wrapping_add(GOLDEN).wrapping_add(mix(i.wrapping_add(r as u64 + 1))));
        }
        Self::seed_from_u64(key)
    }

    pub fn step(&mut self) -> u64 {
        let result = self.s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    pub fn uniform(&mut self) -> f64 {
        (self.step() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = ((self.step() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn between(&mut self, lo: u64, hi: u64) -> u64 {
        debug_assert!(lo <= hi);
        let span = (hi - lo) as u128 + 1;
        lo + ((self.step() as u128 * span) >> 64) as u64
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.between(0, i as u64) as usize;
            items.swap(i, j);
        }
    }
}

impl RngCore for Xoshiro256 {
    fn next_u32(&mut self) -> u32 {
        (self.step() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.step()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.step().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}
