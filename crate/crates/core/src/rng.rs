//! Seeded standard-normal streams.
//!
//! The stream algorithm is fixed so that other implementations can
//! reproduce latents bit for bit:
//!
//! * the generator is ChaCha20 (20 rounds, 64-bit block counter starting at
//!   zero, zero nonce) keyed by the seed written little-endian into the
//!   first 8 key bytes, the remaining 24 key bytes being zero;
//! * each 64-bit output `x` becomes a uniform in `(0, 1]` as
//!   `((x >> 11) + 1) * 2^-53`;
//! * normals use the Box-Muller transform on consecutive uniforms
//!   `(u1, u2)`: `r = sqrt(-2 ln u1)`, yielding `r cos(2π u2)` then
//!   `r sin(2π u2)`.
//!
//! Latent samples are rounded to binary32 so that they survive the on-disk
//! format unchanged.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use crate::latents::{LatentError, LatentField, Shape};

const UNIT: f64 = 1.0 / (1u64 << 53) as f64;

/// Deterministic N(0, 1) stream.
pub struct GaussianStream {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        Self {
            rng: ChaCha20Rng::from_seed(key),
            spare: None,
        }
    }

    /// Uniform in `(0, 1]`.
    pub fn next_uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 * UNIT
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.next_uniform();
        let u2 = self.next_uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Draws the next field of the stream, channel-major, values rounded to f32.
    pub fn next_field(&mut self, shape: Shape) -> Result<LatentField, LatentError> {
        let values = (0..shape.len())
            .map(|_| self.next_normal() as f32 as f64)
            .collect();
        LatentField::new(shape, values)
    }
}
