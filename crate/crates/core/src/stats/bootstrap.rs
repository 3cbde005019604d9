//! Percentile bootstrap over queries.
//!
//! Resample `i` draws from a ChaCha8 stream selected by `i` under the master
//! seed, so results do not depend on how resamples are scheduled. Bounds use
//! the nearest-rank percentile of the sorted resample means.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub confidence: f64,
    pub master_seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            resamples: 10_000,
            confidence: 0.95,
            master_seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn new(resamples: usize, master_seed: u64) -> Self {
        Self {
            resamples,
            master_seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resamples == 0 {
            return Err(Error::InvalidConfig("resamples must be at least 1".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "confidence {} is not in (0, 1)",
                self.confidence
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

impl IntervalEstimate {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Mean computed as an offset from the first value, which makes constant
/// data come out exact.
fn shifted_mean(values: &[f64], pivot: f64) -> f64 {
    pivot + values.iter().map(|v| v - pivot).sum::<f64>() / values.len() as f64
}

fn resample_mean(values: &[f64], rng: &mut ChaCha8Rng) -> f64 {
    let n = values.len();
    let pivot = values[0];
    let sum: f64 = (0..n).map(|_| values[rng.gen_range(0..n)] - pivot).sum();
    pivot + sum / n as f64
}

/// Nearest-rank percentile of sorted data, `p` in (0, 1).
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = (p * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

fn interval(estimate: f64, mut draws: Vec<f64>, confidence: f64) -> IntervalEstimate {
    draws.sort_by(f64::total_cmp);
    let tail = (1.0 - confidence) / 2.0;
    IntervalEstimate {
        estimate,
        lower: nearest_rank(&draws, tail),
        upper: nearest_rank(&draws, 1.0 - tail),
    }
}

pub fn bootstrap_mean_ci(values: &[f64], config: &BootstrapConfig) -> Result<IntervalEstimate> {
    config.validate()?;
    if values.is_empty() {
        return Err(Error::Empty("value list"));
    }
    let draws: Vec<f64> = (0..config.resamples as u64)
        .into_par_iter()
        .map(|i| resample_mean(values, &mut stream(config.master_seed, i)))
        .collect();
    Ok(interval(shifted_mean(values, values[0]), draws, config.confidence))
}

/// Bootstrap of the mean multimodal-minus-unimodal difference.
///
/// `pairs[q]` holds one `(mm, unimodal)` pair per retriever for query `q`;
/// every query must carry the same number of retrievers. Differences are
/// formed per pair before averaging and a resampled query brings all of its
/// retrievers along.
pub fn paired_delta_ci(pairs: &[Vec<(f64, f64)>], config: &BootstrapConfig) -> Result<IntervalEstimate> {
    let per_query = per_query_differences(pairs)?;
    bootstrap_mean_ci(&per_query, config)
}

fn per_query_differences(pairs: &[Vec<(f64, f64)>]) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(Error::Empty("pair list"));
    }
    let width = pairs[0].len();
    if width == 0 {
        return Err(Error::Misaligned("query 0 has no retriever pairs".into()));
    }
    pairs
        .iter()
        .enumerate()
        .map(|(q, row)| {
            if row.len() != width {
                return Err(Error::Misaligned(format!(
                    "query {q} has {} retriever pairs, query 0 has {width}",
                    row.len()
                )));
            }
            let diffs: Vec<f64> = row.iter().map(|(mm, uni)| mm - uni).collect();
            Ok(shifted_mean(&diffs, diffs[0]))
        })
        .collect()
}

/// `mean(a) - mean(b)`; each split is resampled on its own stream.
pub fn between_split_delta_ci(a: &[f64], b: &[f64], config: &BootstrapConfig) -> Result<IntervalEstimate> {
    config.validate()?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("split"));
    }
    let draws: Vec<f64> = (0..config.resamples as u64)
        .into_par_iter()
        .map(|i| {
            resample_mean(a, &mut stream(config.master_seed, 2 * i))
                - resample_mean(b, &mut stream(config.master_seed, 2 * i + 1))
        })
        .collect();
    let estimate = shifted_mean(a, a[0]) - shifted_mean(b, b[0]);
    Ok(interval(estimate, draws, config.confidence))
}
