//! Deterministic random streams.
//!
//! Every random decision in a run draws from a stream identified by the run
//! seed plus a [`StreamKey`] naming the entity and purpose. Streams are
//! derived independently (SHA-256 of the seed and key feeds a ChaCha8
//! generator), so adding an entity never perturbs the draws of any other.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Rejection sampling gives up after this many draws fall outside the interval.
pub const MAX_REJECTIONS: u32 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RngError {
    #[error("Poisson rate must be finite and non-negative, got {0}")]
    InvalidRate(f64),
    #[error("standard deviation must be finite and non-negative, got {0}")]
    InvalidSigma(f64),
    #[error("empty interval [{lo}, {hi}]")]
    EmptyInterval { lo: f64, hi: f64 },
    #[error("interval [{lo}, {hi}] has negligible mass under Normal({mu}, {sigma})")]
    NegligibleMass { mu: f64, sigma: f64, lo: f64, hi: f64 },
}

/// Label of one random stream: a purpose tag plus up to two integers
/// (typically an entity id and a day index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub tag: &'static str,
    pub a: u64,
    pub b: u64,
}

impl StreamKey {
    pub const fn new(tag: &'static str, a: u64, b: u64) -> Self {
        StreamKey { tag, a, b }
    }
}

/// A seeded random stream.
#[derive(Debug, Clone)]
pub struct SimRng {
    inner: ChaCha8Rng,
}

impl SimRng {
    pub fn stream(seed: u64, key: StreamKey) -> Self {
        let mut h = Sha256::new();
        h.update(b"ecash-sim/stream/v1");
        h.update(seed.to_le_bytes());
        h.update((key.tag.len() as u64).to_le_bytes());
        h.update(key.tag.as_bytes());
        h.update(key.a.to_le_bytes());
        h.update(key.b.to_le_bytes());
        let digest: [u8; 32] = h.finalize().into();
        SimRng {
            inner: ChaCha8Rng::from_seed(digest),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer on `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn normal(&mut self, mu: f64, sigma: f64) -> Result<f64, RngError> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(RngError::InvalidSigma(sigma));
        }
        if sigma == 0.0 {
            return Ok(mu);
        }
        let n = Normal::new(mu, sigma).map_err(|_| RngError::InvalidSigma(sigma))?;
        Ok(n.sample(&mut self.inner))
    }

    /// Normal(μ, σ) redrawn until it lands in `[lo, hi]`.
    pub fn truncated_normal(&mut self, mu: f64, sigma: f64, lo: f64, hi: f64) -> Result<f64, RngError> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(RngError::InvalidSigma(sigma));
        }
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(RngError::EmptyInterval { lo, hi });
        }
        let negligible = RngError::NegligibleMass { mu, sigma, lo, hi };
        if sigma == 0.0 {
            return if (lo..=hi).contains(&mu) {
                Ok(mu)
            } else {
                Err(negligible)
            };
        }
        let n = Normal::new(mu, sigma).map_err(|_| RngError::InvalidSigma(sigma))?;
        for _ in 0..MAX_REJECTIONS {
            let x = n.sample(&mut self.inner);
            if x >= lo && x <= hi {
                return Ok(x);
            }
        }
        Err(negligible)
    }

    pub fn poisson(&mut self, lambda: f64) -> Result<u64, RngError> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(RngError::InvalidRate(lambda));
        }
        if lambda == 0.0 {
            return Ok(0);
        }
        let p = Poisson::new(lambda).map_err(|_| RngError::InvalidRate(lambda))?;
        Ok(p.sample(&mut self.inner) as u64)
    }

    /// `k` distinct indices from `0..n`, in sampling order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        let k = k.min(n);
        rand::seq::index::sample(&mut self.inner, n, k).into_vec()
    }

    /// Index drawn from non-negative weights. Returns `None` if all weights
    /// are zero.
    pub fn weighted_index(&mut self, weights: &[f64]) -> Option<usize> {
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return None;
        }
        let mut target = self.uniform() * total;
        for (i, w) in weights.iter().enumerate() {
            if target < *w {
                return Some(i);
            }
            target -= w;
        }
        weights.iter().rposition(|w| *w > 0.0)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }
}

/// Sample from Poisson(λ) on the given stream.
pub fn poisson_draw(rng: &mut SimRng, lambda: f64) -> Result<u64, RngError> {
    rng.poisson(lambda)
}

/// Sample from Normal(μ, σ) restricted to `[lo, hi]` by rejection.
pub fn truncated_normal_draw(rng: &mut SimRng, mu: f64, sigma: f64, lo: f64, hi: f64) -> Result<f64, RngError> {
    rng.truncated_normal(mu, sigma, lo, hi)
}
