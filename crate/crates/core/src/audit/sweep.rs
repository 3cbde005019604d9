//! Robustness of the shortcut rate to the cutoff and to the retriever pool.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{best_rank, AuditConfig, Pool};
use crate::error::{Error, Result};
use crate::rank_store::{Condition, RunMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub cutoff: u32,
    pub shortcut_count: usize,
    /// Fraction of all queries.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooEntry {
    pub removed: String,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooReport {
    pub cutoff: u32,
    pub full_rate: f64,
    pub entries: Vec<LooEntry>,
    pub min_rate: f64,
    pub max_rate: f64,
}

/// Best rank over either unimodal condition, per query.
fn best_unimodal(matrix: &RunMatrix, pool: &Pool) -> Vec<Option<u32>> {
    (0..matrix.manifest().num_queries())
        .into_par_iter()
        .map(|q| {
            let t = best_rank(matrix, q, pool, Condition::Text);
            let i = best_rank(matrix, q, pool, Condition::Image);
            match (t, i) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            }
        })
        .collect()
}

fn rate(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        count as f64 / total as f64
    }
}

fn shortcut_rate(matrix: &RunMatrix, pool: &Pool, k: u32) -> f64 {
    let best = best_unimodal(matrix, pool);
    rate(best.iter().filter(|r| r.is_some_and(|r| r <= k)).count(), best.len())
}

/// Shortcut rate at each cutoff, ascending by cutoff.
pub fn cutoff_sweep(matrix: &RunMatrix, cutoffs: &[u32], pool: &Pool) -> Result<Vec<SweepPoint>> {
    if cutoffs.is_empty() {
        return Err(Error::Empty("cutoff list"));
    }
    if cutoffs.contains(&0) {
        return Err(Error::InvalidConfig("cutoffs must be at least 1".into()));
    }
    let mut ks = cutoffs.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let best = best_unimodal(matrix, pool);
    Ok(ks
        .into_iter()
        .map(|k| {
            let shortcut_count = best.iter().filter(|r| r.is_some_and(|r| r <= k)).count();
            SweepPoint {
                cutoff: k,
                shortcut_count,
                rate: rate(shortcut_count, best.len()),
            }
        })
        .collect())
}

/// Shortcut rate with each pool member removed in turn.
pub fn loo_analysis(matrix: &RunMatrix, config: &AuditConfig, pool: &Pool) -> Result<LooReport> {
    if pool.len() < 2 {
        return Err(Error::PoolTooSmall);
    }
    config.validate(matrix.manifest())?;
    let k = config.cutoff;
    let full_rate = shortcut_rate(matrix, pool, k);
    let entries = pool
        .indices()
        .iter()
        .map(|&r| {
            Ok(LooEntry {
                removed: matrix.manifest().retriever_ids()[r].clone(),
                rate: shortcut_rate(matrix, &pool.without(r)?, k),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let min_rate = entries.iter().map(|e| e.rate).fold(f64::INFINITY, f64::min);
    let max_rate = entries.iter().map(|e| e.rate).fold(f64::NEG_INFINITY, f64::max);
    Ok(LooReport {
        cutoff: k,
        full_rate,
        entries,
        min_rate,
        max_rate,
    })
}

/// Shortcut rate each pool member finds on its own.
pub fn single_retriever_rates(matrix: &RunMatrix, config: &AuditConfig, pool: &Pool) -> Result<Vec<LooEntry>> {
    config.validate(matrix.manifest())?;
    pool.indices()
        .iter()
        .map(|&r| {
            Ok(LooEntry {
                removed: matrix.manifest().retriever_ids()[r].clone(),
                rate: shortcut_rate(matrix, &Pool::from_indices(vec![r])?, config.cutoff),
            })
        })
        .collect()
}
