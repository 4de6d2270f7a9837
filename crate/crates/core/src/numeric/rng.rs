//! Portable seeded randomness.
//!
//! The bit stream is ChaCha8 (`rand_chacha`), keyed by expanding the 64-bit
//! seed with `SeedableRng::seed_from_u64` and selecting an independent ChaCha
//! stream per consumer. Standard normals use the basic Box–Muller transform:
//! two uniforms `u1 ∈ (0, 1]`, `u2 ∈ [0, 1)` built from the top 53 bits of a
//! `u64` each give `r = sqrt(-2 ln u1)` and the pair `(r cos 2πu2, r sin 2πu2)`.
//! The cosine variate is returned first, the sine variate on the next call.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream identifiers, one per randomness consumer, all derived from a root seed.
pub mod streams {
    pub const DEFAULT: u64 = 0;
    pub const SYNTH_CENTERS: u64 = 1;
    pub const SYNTH_NOISE: u64 = 2;
    pub const EPISODES: u64 = 3;
    pub const SIGMA_NOISE: u64 = 4;
    pub const SUPPORT_SELECT: u64 = 5;
    pub const GRADCHECK: u64 = 6;
}

const TWO_POW_MINUS_53: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, streams::DEFAULT)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
            spare_normal: None,
        }
    }

    /// Fresh generator on another stream of the same root seed.
    pub fn derive(&self, stream: u64) -> Self {
        Self::with_stream(self.seed, stream)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * TWO_POW_MINUS_53
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // (0, 1] so the log is finite
        let u1 = ((self.inner.next_u64() >> 11) + 1) as f64 * TWO_POW_MINUS_53;
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }
}

impl RngCore for RngState {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}
