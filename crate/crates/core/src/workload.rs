//! Independent reference model workloads.
//!
//! A workload is nothing more than a popularity vector `p_1 >= p_2 >= ... >= p_n`
//! over `n` pages. Page ids are 0-indexed and page 0 is the most popular.

use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Random source used by every stochastic operation in the crate.
pub type SimRng = ChaCha8Rng;

/// Builds the crate's random source from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Page-access probabilities, sorted non-increasing.
#[derive(Debug, Clone)]
pub struct PopularityDist {
    probs: Vec<f64>,
    gamma: Option<f64>,
    /// `order[k]` is the caller's index of the page stored at sorted rank `k`.
    order: Vec<usize>,
    sampler: WeightedIndex<f64>,
}

impl PopularityDist {
    /// Zipf-like popularity `p_k = c k^-gamma` over ranks `k = 1..=n`.
    pub fn zipf(n: usize, gamma: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidWorkload("page count must be positive".into()));
        }
        if !gamma.is_finite() || gamma < 0.0 {
            return Err(Error::InvalidWorkload(format!(
                "zipf exponent must be finite and >= 0, got {gamma}"
            )));
        }
        let weights: Vec<f64> = (1..=n).map(|k| (k as f64).powf(-gamma)).collect();
        let total = compensated_sum(weights.iter().copied());
        let probs = weights.into_iter().map(|w| w / total).collect();
        Self::from_sorted(probs, Some(gamma), (0..n).collect())
    }

    /// Arbitrary popularity vector. Entries are renormalized to sum to one and
    /// sorted non-increasing; [`Self::original_index`] maps a sorted page id
    /// back to its position in `probs`.
    pub fn custom(probs: &[f64]) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidWorkload("empty probability vector".into()));
        }
        if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| !p.is_finite() || **p <= 0.0) {
            return Err(Error::InvalidWorkload(format!(
                "entry {i} must be positive and finite, got {p}"
            )));
        }
        let mut order: Vec<usize> = (0..probs.len()).collect();
        // Stable sort keeps ties in caller order.
        order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
        let total = compensated_sum(probs.iter().copied());
        let sorted = order.iter().map(|&i| probs[i] / total).collect();
        Self::from_sorted(sorted, None, order)
    }

    /// Reads one probability per line (blank lines ignored).
    pub fn from_probs_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut probs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let p: f64 = line.parse().map_err(|_| {
                Error::InvalidWorkload(format!(
                    "{}:{}: not a decimal number: {line:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            probs.push(p);
        }
        Self::custom(&probs)
    }

    fn from_sorted(probs: Vec<f64>, gamma: Option<f64>, order: Vec<usize>) -> Result<Self> {
        let sampler =
            WeightedIndex::new(&probs).map_err(|e| Error::InvalidWorkload(format!("cannot build sampler: {e}")))?;
        Ok(Self {
            probs,
            gamma,
            order,
            sampler,
        })
    }

    pub fn n(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, page: usize) -> f64 {
        self.probs[page]
    }

    /// Zipf exponent, if the distribution was built by [`Self::zipf`].
    pub fn gamma(&self) -> Option<f64> {
        self.gamma
    }

    pub fn original_index(&self, page: usize) -> usize {
        self.order[page]
    }

    /// Draws one request.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.sampler.sample(rng)
    }
}

/// Neumaier-compensated summation.
pub(crate) fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
