//! Deterministic random source.
//!
//! All randomness in the pipeline (synthetic cohorts, splits, folds) comes
//! from [`SplitMix64`], a counter-based generator defined entirely by the
//! algorithm below so that any implementation reproduces the same streams:
//!
//! ```text
//! GAMMA = 0x9E3779B97F4A7C15
//! mix(z):  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//!          z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//!          return z ^ (z >> 31)
//! draw k (k = 1, 2, ...):  mix(seed + k * GAMMA)      (wrapping u64 arithmetic)
//! ```
//!
//! Derived values:
//!
//! * uniform `f64` in `[0, 1)`: `(u >> 11) * 2^-53`
//! * uniform integer in `[0, n)`: high 64 bits of the 128-bit product `u * n`
//! * standard normal: Box–Muller on two consecutive uniforms `u1, u2`,
//!   `r = sqrt(-2 ln(1 - u1))`, emitting `r cos(2π u2)` then `r sin(2π u2)`
//! * shuffle: Fisher–Yates from the last index down, `j = below(i + 1)`
//! * sub-streams: [`derive_seed`]`(master, task) = mix(master ^ mix(task + GAMMA))`

use std::f64::consts::TAU;

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for an independent sub-stream, e.g. one per fold or per ratio.
pub fn derive_seed(master: u64, task: u64) -> u64 {
    mix(master ^ mix(task.wrapping_add(GAMMA)))
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    seed: u64,
    counter: u64,
    spare_normal: Option<f64>,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            counter: 0,
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.seed.wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`. `n` must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        let (s, c) = (TAU * u2).sin_cos();
        self.spare_normal = Some(r * s);
        r * c
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
