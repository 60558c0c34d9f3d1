//! Seeded pseudo-randomness.
//!
//! Every stochastic operation in the crate draws from an [`RngStream`], a thin
//! wrapper over ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded through
//! `SeedableRng::seed_from_u64`. Sub-streams are derived with
//! [`derive_seed`], a SplitMix64-style mix of `(parent, index)`, so stream `r`
//! never depends on how many sibling streams exist.
//!
//! Beta variates are produced as `X / (X + Y)` with `X ~ Gamma(alpha, 1)` and
//! `Y ~ Gamma(beta, 1)`; gamma variates come from `rand_distr::Gamma`
//! (Marsaglia-Tsang squeeze, with the `U^(1/a)` boost for shapes below one).
//! Normal variates come from `rand_distr::StandardNormal` (ziggurat).

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `H(parent, index)`: two SplitMix64 rounds over the parent seed offset by
/// `(index + 1)` golden-ratio increments.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    let offset = index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA);
    splitmix64(splitmix64(parent.wrapping_add(offset)) ^ index)
}

/// Named sub-stream indices used inside one experiment run.
pub mod streams {
    pub const ENVIRONMENT: u64 = 0;
    pub const CONTEXTUAL: u64 = 1;
    pub const NONCONTEXTUAL: u64 = 2;
    pub const LAYER: u64 = 3;
}

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent child stream; does not advance `self`.
    pub fn substream(&self, index: u64) -> Self {
        RngStream::new(derive_seed(self.seed, index))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn gamma(&mut self, shape: f64) -> Result<f64> {
        let dist = Gamma::new(shape, 1.0)
            .map_err(|e| Error::Corruption(format!("gamma shape {shape}: {e}")))?;
        Ok(dist.sample(&mut self.inner))
    }

    pub fn beta(&mut self, alpha: f64, beta: f64) -> Result<f64> {
        if !(alpha.is_finite() && beta.is_finite() && alpha > 0.0 && beta > 0.0) {
            return Err(Error::Corruption(format!(
                "beta parameters must be finite and positive, got ({alpha}, {beta})"
            )));
        }
        let x = self.gamma(alpha)?;
        let y = self.gamma(beta)?;
        let s = x + y;
        // Both gammas can underflow to zero for tiny shapes.
        if s > 0.0 {
            Ok(x / s)
        } else if self.uniform() < alpha / (alpha + beta) {
            Ok(1.0)
        } else {
            Ok(0.0)
        }
    }

    /// Fisher-Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.index(i + 1);
            p.swap(i, j);
        }
        p
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
