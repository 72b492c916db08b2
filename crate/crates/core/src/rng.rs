//! Deterministic, labeled random streams.
//!
//! All randomness in the crate is drawn from [`Stream`]s produced by an
//! [`RngFactory`]. A stream is a ChaCha8 generator seeded with
//! `SHA-256(master_seed_le || label)`, so distinct labels give independent
//! streams and the same `(seed, label)` pair reproduces the same draws on
//! every run. Gaussians come from the trigonometric Box-Muller transform on
//! top of the raw 64-bit output; no library distribution code is involved,
//! which keeps the byte-for-byte behavior pinned to this file.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

/// Derives independent [`Stream`]s from one master seed.
#[derive(Debug, Clone, Copy)]
pub struct RngFactory {
    master_seed: u64,
}

impl RngFactory {
    pub fn new(master_seed: u64) -> Self {
        RngFactory { master_seed }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// A stream keyed by `label`. Identical `(seed, label)` pairs yield
    /// identical streams; different labels are independent.
    pub fn stream(&self, label: &str) -> Stream {
        let mut hasher = Sha256::new();
        hasher.update(self.master_seed.to_le_bytes());
        hasher.update([0u8]);
        hasher.update(label.as_bytes());
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        Stream {
            rng: ChaCha8Rng::from_seed(seed),
            spare_normal: None,
        }
    }
}

/// One deterministic pseudo-random stream.
pub struct Stream {
    rng: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl Stream {
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `(0, 1]`; safe to pass to `ln`.
    #[inline]
    fn uniform_open_zero(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller; two uniforms produce two normals,
    /// the second is cached.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform_open_zero();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(radius * theta.sin());
        radius * theta.cos()
    }

    /// Uniform integer in `0..bound`, by rejection (unbiased).
    pub fn uniform_index(&mut self, bound: usize) -> usize {
        assert!(bound > 0);
        let bound = bound as u64;
        let zone = u64::MAX - u64::MAX % bound;
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % bound) as usize;
            }
        }
    }

    /// Samples a category by inverse CDF over cumulative sums of `p`.
    /// Returns a 0-based index.
    pub fn categorical(&mut self, p: &[f64]) -> usize {
        debug_assert!(!p.is_empty());
        let u = self.uniform();
        let mut cum = 0.0;
        for (i, &pi) in p.iter().enumerate() {
            cum += pi;
            if u < cum {
                return i;
            }
        }
        p.len() - 1
    }
}
