//! Counter-based random numbers keyed by `(seed, stream)`.
//!
//! The raw bit source is ChaCha8 with the seed expanded into the key and the
//! stream id in the nonce, so each consumer reads an independent sequence and
//! adding a consumer never shifts another one. Normal variates use Box–Muller
//! and permutations use Fisher–Yates; both go through `libm` so the output does
//! not depend on the platform's math library.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use super::Array;

/// Stream-id namespaces. The high 32 bits name the consumer, the low 32 bits
/// index within it (a shuffle unit, a parameter tensor, a denoising step).
pub mod stream {
    pub const NOISE: u64 = 1 << 32;
    pub const SHUFFLE: u64 = 2 << 32;
    pub const WEIGHTS: u64 = 3 << 32;
    pub const DDIM_ETA: u64 = 4 << 32;
    pub const TEXT: u64 = 5 << 32;
    pub const FEATURES: u64 = 6 << 32;

    pub fn indexed(base: u64, index: u64) -> u64 {
        base | (index & 0xFFFF_FFFF)
    }
}

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `(0, 1]`.
    fn uniform_open_low(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform_open_low();
        let u2 = self.uniform();
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * libm::sin(theta));
        r * libm::cos(theta)
    }

    /// Unbiased integer in `[0, n)` (Lemire's multiply-and-reject).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "empty range");
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }
}

/// Array of i.i.d. standard normal samples drawn in row-major order.
pub fn rng_normal(rng: &mut Rng, shape: &[usize]) -> Array {
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.normal() as f32).collect();
    Array::from_vec(shape, data).expect("shape with zero extent")
}

/// Uniform random permutation of `0..n` (Fisher–Yates).
pub fn rng_permutation(rng: &mut Rng, n: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        perm.swap(i, j);
    }
    perm
}
