//! Seeded weight initialization.

use alloc::vec::Vec;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic source of initial weights. Same seed, same call sequence,
/// bit-identical tensors.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream derived from `seed`, used so that e.g. the decoder
    /// does not shift when the encoder's parameter count changes.
    pub fn stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    pub fn uniform(&mut self, n: usize, bound: f64) -> Vec<f64> {
        if bound == 0.0 {
            return alloc::vec![0.0; n];
        }
        let dist = Uniform::new_inclusive(-bound, bound);
        (0..n).map(|_| dist.sample(&mut self.rng)).collect()
    }

    /// Uniform weights with variance `gain^2 / fan_in`.
    pub fn fan_in_uniform(&mut self, n: usize, fan_in: usize, gain: f64) -> Vec<f64> {
        let bound = gain * libm::sqrt(3.0 / fan_in.max(1) as f64);
        self.uniform(n, bound)
    }
}

/// Gain for layers followed by a (leaky) rectifier.
pub const RECTIFIER_GAIN: f64 = core::f64::consts::SQRT_2;
/// Gain for layers feeding a linear or sigmoid output.
pub const LINEAR_GAIN: f64 = 1.0;
