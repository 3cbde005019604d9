use serde::{Deserialize, Serialize};

use super::bootstrap::{between_split_delta_ci, bootstrap_mean_ci, paired_delta_ci, BootstrapConfig};
use crate::audit::Pool;
use crate::error::{Error, Result};
use crate::metrics::{cell_metric, MetricKind, QuerySplit};
use crate::rank_store::{Condition, RunMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRow {
    pub dataset: String,
    pub split: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub metric: String,
    /// `mm`, `delta_mm_t`, `delta_mm_i`, or `mm_minus_<split>`.
    pub quantity: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Per query, one metric value per pool retriever under `condition`.
fn per_query(matrix: &RunMatrix, split: &QuerySplit, kind: MetricKind, pool: &Pool, condition: Condition) -> Result<Vec<Vec<f64>>> {
    let manifest = matrix.manifest();
    split
        .query_ids
        .iter()
        .map(|q| {
            let qi = manifest.require_query(q)?;
            Ok(pool
                .indices()
                .iter()
                .map(|&r| cell_metric(matrix, kind, qi, r, condition))
                .collect())
        })
        .collect()
}

fn row_means(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect()
}

fn zip_pairs(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<(f64, f64)>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().copied().zip(y.iter().copied()).collect())
        .collect()
}

/// Pool-averaged multimodal score and the paired multimodal-minus-unimodal
/// deltas for each split, plus the between-split difference of every later
/// split against the first.
pub fn uncertainty_report(
    matrix: &RunMatrix,
    splits: &[QuerySplit],
    kind: MetricKind,
    pool: &Pool,
    config: &BootstrapConfig,
) -> Result<Vec<UncertaintyRow>> {
    if splits.is_empty() {
        return Err(Error::Empty("split list"));
    }
    let dataset = matrix.manifest().benchmark_id().to_owned();
    let mut rows = Vec::new();
    let mut first_mm: Option<(String, Vec<f64>)> = None;
    for split in splits {
        if split.query_ids.is_empty() {
            return Err(Error::Empty("split"));
        }
        let mm = per_query(matrix, split, kind, pool, Condition::Multimodal)?;
        let text = per_query(matrix, split, kind, pool, Condition::Text)?;
        let image = per_query(matrix, split, kind, pool, Condition::Image)?;
        let mm_means = row_means(&mm);
        let mut push = |quantity: String, ci: super::IntervalEstimate| {
            rows.push(UncertaintyRow {
                dataset: dataset.clone(),
                split: split.id.clone(),
                n: split.query_ids.len(),
                metric: kind.to_string(),
                quantity,
                estimate: ci.estimate,
                lower: ci.lower,
                upper: ci.upper,
            })
        };
        push("mm".into(), bootstrap_mean_ci(&mm_means, config)?);
        push("delta_mm_t".into(), paired_delta_ci(&zip_pairs(&mm, &text), config)?);
        push("delta_mm_i".into(), paired_delta_ci(&zip_pairs(&mm, &image), config)?);
        match &first_mm {
            None => first_mm = Some((split.id.clone(), mm_means)),
            Some((id, base)) => push(format!("mm_minus_{id}"), between_split_delta_ci(&mm_means, base, config)?),
        }
    }
    Ok(rows)
}
