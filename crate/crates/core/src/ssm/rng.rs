//! Counter-based generator used for weight initialization.
//!
//! Output `n` (starting at `n = 1`) is the SplitMix64 finalizer applied to
//! `seed + n * 0x9E3779B97F4A7C15`. Uniforms take the top 53 bits and are
//! centred in their cell, so they lie strictly inside (0, 1). Each normal
//! sample consumes two uniforms through the cosine branch of Box-Muller.
//! Archives depend on this exact sequence; changing it requires a new format
//! version.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone)]
pub struct CounterRng {
    seed: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        let mut z = self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self, std: f64) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        std * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
