use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Scalar;

/// Name recorded in model files so a reader can reproduce every draw.
pub const PRNG_ALGORITHM: &str = "chacha8/box-muller";

/// Deterministic random source used everywhere randomness is needed.
///
/// The stream is ChaCha8 keyed by the 64-bit seed; normal deviates come
/// from the Box-Muller transform on 53-bit uniforms. Both are fixed
/// algorithms, so a seed pins every matrix, split and shuffle bit-exactly
/// across platforms and releases.
#[derive(Clone, Debug)]
pub struct SeededRng {
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in (0, 1]: 53 mantissa bits, never exactly zero.
    pub fn uniform_open(&mut self) -> f64 {
        (((self.inner.next_u64() >> 11) + 1) as f64) * (1.0 / 9007199254740992.0)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) as f64) * (1.0 / 9007199254740992.0)
    }

    /// Standard normal deviate via Box-Muller; pairs are cached.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(radius * angle.sin());
        radius * angle.cos()
    }

    /// Fill a slice with i.i.d. N(0, sigma^2) values.
    pub fn fill_normal<S: Scalar>(&mut self, out: &mut [S], sigma: f64) {
        for v in out {
            *v = S::from_f64(self.normal() * sigma);
        }
    }

    /// Unbiased integer in [0, bound) by rejection sampling.
    pub fn below(&mut self, bound: usize) -> usize {
        assert!(bound > 0);
        let bound = bound as u64;
        let zone = u64::MAX - (u64::MAX % bound);
        loop {
            let v = self.inner.next_u64();
            if v < zone {
                return (v % bound) as usize;
            }
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
