//! Ranking metrics under multi-positive relevance, per-condition scores and
//! the normalised composition gap.
//!
//! Gains are binary and the discount is `1 / log2(1 + r)`. A missing cell
//! places every relevant item at +inf and therefore scores 0.

mod reference;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::audit::Pool;
use crate::error::{Error, Result};
use crate::rank_store::{Condition, RunMatrix};

pub use reference::{ReferenceRow, ReferenceTable};

/// Rank cutoff; `Full` scores the whole gallery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cutoff {
    At(u32),
    Full,
}

impl Cutoff {
    fn admits(self, rank: u32) -> bool {
        match self {
            Cutoff::At(k) => rank <= k,
            Cutoff::Full => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricKind {
    Recall(u32),
    Mrr(Cutoff),
    Ndcg(Cutoff),
}

impl MetricKind {
    pub fn validate(self) -> Result<Self> {
        match self {
            MetricKind::Recall(0) | MetricKind::Mrr(Cutoff::At(0)) | MetricKind::Ndcg(Cutoff::At(0)) => {
                Err(Error::InvalidConfig("metric cutoff must be at least 1".into()))
            }
            k => Ok(k),
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricKind::Recall(k) => write!(f, "recall@{k}"),
            MetricKind::Mrr(Cutoff::Full) => f.write_str("mrr"),
            MetricKind::Mrr(Cutoff::At(k)) => write!(f, "mrr@{k}"),
            MetricKind::Ndcg(Cutoff::Full) => f.write_str("ndcg"),
            MetricKind::Ndcg(Cutoff::At(k)) => write!(f, "ndcg@{k}"),
        }
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    /// Accepts `recall@K`, `mrr`, `mrr@K`, `ndcg`, `ndcg@K` (case-insensitive).
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let (name, cutoff) = match lower.split_once('@') {
            Some((n, k)) => {
                let k: u32 = k
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad metric cutoff in `{s}`")))?;
                (n.to_owned(), Cutoff::At(k))
            }
            None => (lower.clone(), Cutoff::Full),
        };
        let kind = match (name.as_str(), cutoff) {
            ("recall", Cutoff::At(k)) => MetricKind::Recall(k),
            ("recall", Cutoff::Full) => {
                return Err(Error::InvalidConfig("recall needs a finite cutoff, e.g. recall@10".into()))
            }
            ("mrr", c) => MetricKind::Mrr(c),
            ("ndcg", c) => MetricKind::Ndcg(c),
            _ => return Err(Error::InvalidConfig(format!("unknown metric `{s}`"))),
        };
        kind.validate()
    }
}

impl Serialize for MetricKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MetricKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn discount(rank: u32) -> f64 {
    1.0 / (1.0 + rank as f64).log2()
}

/// Per-query metric value in `[0, 1]`.
///
/// `relevant_ranks` must be nonempty and strictly increasing.
/// `relevance_count` is the size of the annotated relevant set; it may exceed
/// the number of listed ranks, the rest being unretrieved.
pub fn metric(kind: MetricKind, relevant_ranks: &[u32], relevance_count: usize) -> Result<f64> {
    kind.validate()?;
    if relevant_ranks.is_empty() {
        return Err(Error::Empty("relevant rank list"));
    }
    if relevant_ranks[0] == 0 || relevant_ranks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::NonIncreasingRanks(relevant_ranks.to_vec()));
    }
    if relevance_count < relevant_ranks.len() {
        return Err(Error::Misaligned(format!(
            "{} ranks for a relevant set of {relevance_count}",
            relevant_ranks.len()
        )));
    }
    Ok(metric_unchecked(kind, relevant_ranks, relevance_count))
}

fn metric_unchecked(kind: MetricKind, ranks: &[u32], relevance_count: usize) -> f64 {
    let best = ranks[0];
    match kind {
        MetricKind::Recall(k) => f64::from(u8::from(best <= k)),
        MetricKind::Mrr(c) => {
            if c.admits(best) {
                1.0 / best as f64
            } else {
                0.0
            }
        }
        MetricKind::Ndcg(c) => {
            let dcg: f64 = ranks.iter().filter(|&&r| c.admits(r)).map(|&r| discount(r)).sum();
            let ideal = match c {
                Cutoff::At(k) => relevance_count.min(k as usize),
                Cutoff::Full => relevance_count,
            };
            let idcg: f64 = (1..=ideal as u32).map(discount).sum();
            dcg / idcg
        }
    }
}

/// Metric for one cell of a matrix; a missing cell scores 0.
pub fn cell_metric(matrix: &RunMatrix, kind: MetricKind, query: usize, retriever: usize, condition: Condition) -> f64 {
    let count = matrix.manifest().relevant(query).len();
    match matrix.cell(query, retriever, condition) {
        Some(rec) => metric_unchecked(kind, &rec.relevant_ranks, count),
        None => 0.0,
    }
}

/// Named subset of the manifest's queries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySplit {
    pub id: String,
    pub query_ids: Vec<String>,
}

impl QuerySplit {
    pub fn new(id: impl Into<String>, query_ids: Vec<String>) -> Self {
        Self {
            id: id.into(),
            query_ids,
        }
    }

    pub fn full(matrix: &RunMatrix) -> Self {
        Self::new("full", matrix.manifest().query_ids().to_vec())
    }
}

/// Mean metric per condition over a split. Values are fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionScores {
    pub retriever_id: String,
    pub split_id: String,
    pub mm: f64,
    pub text: f64,
    pub image: f64,
}

impl ConditionScores {
    pub fn delta_mm_i(&self) -> f64 {
        self.mm - self.image
    }

    pub fn delta_mm_t(&self) -> f64 {
        self.mm - self.text
    }

    pub fn delta_i_t(&self) -> f64 {
        self.image - self.text
    }
}

pub fn condition_scores(
    matrix: &RunMatrix,
    split: &QuerySplit,
    retriever_id: &str,
    kind: MetricKind,
) -> Result<ConditionScores> {
    kind.validate()?;
    let manifest = matrix.manifest();
    let r = manifest.require_retriever(retriever_id)?;
    let qs = split
        .query_ids
        .iter()
        .map(|q| manifest.require_query(q))
        .collect::<Result<Vec<_>>>()?;
    if qs.is_empty() {
        return Err(Error::Empty("split"));
    }
    let mean = |c: Condition| qs.iter().map(|&q| cell_metric(matrix, kind, q, r, c)).sum::<f64>() / qs.len() as f64;
    Ok(ConditionScores {
        retriever_id: retriever_id.to_owned(),
        split_id: split.id.clone(),
        mm: mean(Condition::Multimodal),
        text: mean(Condition::Text),
        image: mean(Condition::Image),
    })
}

/// `1 - max(I, T) / MM`; undefined when `MM = 0`. Never clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CompGap {
    Value(f64),
    Undefined,
}

impl CompGap {
    pub fn value(self) -> Option<f64> {
        match self {
            CompGap::Value(v) => Some(v),
            CompGap::Undefined => None,
        }
    }
}

impl Serialize for CompGap {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.value().serialize(s)
    }
}

impl<'de> Deserialize<'de> for CompGap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(match Option::<f64>::deserialize(d)? {
            Some(v) => CompGap::Value(v),
            None => CompGap::Undefined,
        })
    }
}

pub fn comp_gap_of(mm: f64, image: f64, text: f64) -> CompGap {
    if mm == 0.0 {
        CompGap::Undefined
    } else {
        CompGap::Value(1.0 - image.max(text) / mm)
    }
}

pub fn comp_gap(scores: &ConditionScores) -> CompGap {
    comp_gap_of(scores.mm, scores.image, scores.text)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AverageGap {
    pub mean: f64,
    pub defined: usize,
    pub undefined: usize,
}

/// Mean composition gap over the defined values.
pub fn avg_comp_gap<'a>(scores: impl IntoIterator<Item = &'a ConditionScores>) -> Result<AverageGap> {
    let gaps: Vec<CompGap> = scores.into_iter().map(comp_gap).collect();
    if gaps.is_empty() {
        return Err(Error::EmptyPool);
    }
    let defined: Vec<f64> = gaps.iter().filter_map(|g| g.value()).collect();
    if defined.is_empty() {
        return Err(Error::AllUndefined);
    }
    Ok(AverageGap {
        mean: defined.iter().sum::<f64>() / defined.len() as f64,
        defined: defined.len(),
        undefined: gaps.len() - defined.len(),
    })
}

/// Condition scores for every pool retriever, in pool order.
pub fn pool_scores(matrix: &RunMatrix, split: &QuerySplit, kind: MetricKind, pool: &Pool) -> Result<Vec<ConditionScores>> {
    let ids = pool.ids(matrix.manifest());
    ids.par_iter()
        .map(|r| condition_scores(matrix, split, r, kind))
        .collect()
}

pub fn avg_comp_gap_over_pool(matrix: &RunMatrix, split: &QuerySplit, kind: MetricKind, pool: &Pool) -> Result<AverageGap> {
    avg_comp_gap(&pool_scores(matrix, split, kind, pool)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRow {
    pub retriever: String,
    pub split: String,
    pub mm: f64,
    pub delta_mm_i: f64,
    pub delta_mm_t: f64,
    pub delta_i_t: f64,
    pub comp_gap: CompGap,
}

impl From<&ConditionScores> for SplitRow {
    fn from(s: &ConditionScores) -> Self {
        Self {
            retriever: s.retriever_id.clone(),
            split: s.split_id.clone(),
            mm: s.mm,
            delta_mm_i: s.delta_mm_i(),
            delta_mm_t: s.delta_mm_t(),
            delta_i_t: s.delta_i_t(),
            comp_gap: comp_gap(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub metric: MetricKind,
    pub splits: Vec<String>,
    /// Retriever-major, splits in the order given.
    pub rows: Vec<SplitRow>,
}

impl SplitReport {
    pub fn row(&self, retriever: &str, split: &str) -> Option<&SplitRow> {
        self.rows.iter().find(|r| r.retriever == retriever && r.split == split)
    }

    /// One line per retriever; per split the MM score and the three deltas,
    /// all in percent with one decimal.
    pub fn to_text(&self) -> String {
        let mut out = format!("{:<20}", self.metric.to_string());
        for s in &self.splits {
            out.push_str(&format!(" | {:^31}", s));
        }
        out.push('\n');
        out.push_str(&format!("{:<20}", "retriever"));
        for _ in &self.splits {
            out.push_str(&format!(" | {:>7} {:>7} {:>7} {:>7}", "MM", "MM-I", "MM-T", "I-T"));
        }
        out.push('\n');
        let mut retrievers: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !retrievers.contains(&r.retriever.as_str()) {
                retrievers.push(&r.retriever);
            }
        }
        for ret in retrievers {
            out.push_str(&format!("{ret:<20}"));
            for s in &self.splits {
                match self.row(ret, s) {
                    Some(r) => out.push_str(&format!(
                        " | {:>7.1} {:>7.1} {:>7.1} {:>7.1}",
                        100.0 * r.mm,
                        100.0 * r.delta_mm_i,
                        100.0 * r.delta_mm_t,
                        100.0 * r.delta_i_t
                    )),
                    None => out.push_str(&format!(" | {:>31}", "-")),
                }
            }
            out.push('\n');
        }
        out
    }
}

pub fn split_report(matrix: &RunMatrix, splits: &[QuerySplit], kind: MetricKind, pool: &Pool) -> Result<SplitReport> {
    if splits.is_empty() {
        return Err(Error::Empty("split list"));
    }
    let ids = pool.ids(matrix.manifest());
    let rows = ids
        .par_iter()
        .map(|r| {
            splits
                .iter()
                .map(|s| condition_scores(matrix, s, r, kind).map(|c| SplitRow::from(&c)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    Ok(SplitReport {
        metric: kind,
        splits: splits.iter().map(|s| s.id.clone()).collect(),
        rows,
    })
}
