//! Unimodal shortcut audit.
//!
//! For each query the best rank over the retriever pool is taken separately
//! for the text-only and image-only conditions. A query whose best unimodal
//! rank is within the cutoff is a shortcut; otherwise it is
//! composition-required when some retriever solves it multimodally, and
//! unresolved when none does. The union of the last two is the shortcut-free
//! (SF) set.

mod panel;
mod sweep;

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rank_store::{BenchmarkManifest, Condition, RunMatrix};

pub use panel::{build_panel, Panel, PanelItem};
pub use sweep::{cutoff_sweep, loo_analysis, single_retriever_rates, LooEntry, LooReport, SweepPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    ShortcutBoth,
    ShortcutText,
    ShortcutImage,
    CompositionRequired,
    Unresolved,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::ShortcutBoth,
        Category::ShortcutText,
        Category::ShortcutImage,
        Category::CompositionRequired,
        Category::Unresolved,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::ShortcutBoth => "shortcut_both",
            Category::ShortcutText => "shortcut_text",
            Category::ShortcutImage => "shortcut_image",
            Category::CompositionRequired => "composition_required",
            Category::Unresolved => "unresolved",
        }
    }

    pub fn is_shortcut(self) -> bool {
        matches!(
            self,
            Category::ShortcutBoth | Category::ShortcutText | Category::ShortcutImage
        )
    }

    /// Member of the shortcut-free residue.
    pub fn is_shortcut_free(self) -> bool {
        !self.is_shortcut()
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown category `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub shortcut_both: usize,
    pub shortcut_text: usize,
    pub shortcut_image: usize,
    pub composition_required: usize,
    pub unresolved: usize,
}

impl CategoryCounts {
    pub fn get(&self, c: Category) -> usize {
        match c {
            Category::ShortcutBoth => self.shortcut_both,
            Category::ShortcutText => self.shortcut_text,
            Category::ShortcutImage => self.shortcut_image,
            Category::CompositionRequired => self.composition_required,
            Category::Unresolved => self.unresolved,
        }
    }

    pub fn get_mut(&mut self, c: Category) -> &mut usize {
        match c {
            Category::ShortcutBoth => &mut self.shortcut_both,
            Category::ShortcutText => &mut self.shortcut_text,
            Category::ShortcutImage => &mut self.shortcut_image,
            Category::CompositionRequired => &mut self.composition_required,
            Category::Unresolved => &mut self.unresolved,
        }
    }

    pub fn total(&self) -> usize {
        Category::ALL.iter().map(|&c| self.get(c)).sum()
    }

    pub fn shortcut(&self) -> usize {
        self.shortcut_both + self.shortcut_text + self.shortcut_image
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub cutoff: u32,
    pub panel_depth: u32,
}

impl AuditConfig {
    /// Panel depth defaults to the cutoff.
    pub fn new(cutoff: u32) -> Self {
        Self {
            cutoff,
            panel_depth: cutoff,
        }
    }

    pub fn validate(&self, manifest: &BenchmarkManifest) -> Result<()> {
        if self.cutoff == 0 {
            return Err(Error::InvalidConfig("cutoff K must be at least 1".into()));
        }
        if self.cutoff >= manifest.gallery_size() {
            return Err(Error::InvalidConfig(format!(
                "cutoff K={} must be smaller than the gallery size {}",
                self.cutoff,
                manifest.gallery_size()
            )));
        }
        if self.panel_depth == 0 {
            return Err(Error::InvalidConfig("panel depth must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self::new(10)
    }
}

/// Per-query classification. Best ranks are over the pool; `None` is +inf.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditLabel {
    pub category: Category,
    pub best_text_rank: Option<u32>,
    pub best_image_rank: Option<u32>,
    pub best_mm_rank: Option<u32>,
}

/// Retriever indices (manifest order) taking part in an audit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pool {
    indices: Vec<usize>,
}

impl Pool {
    pub fn all(manifest: &BenchmarkManifest) -> Result<Self> {
        Self::from_indices((0..manifest.num_retrievers()).collect())
    }

    pub fn from_ids<S: AsRef<str>>(manifest: &BenchmarkManifest, ids: &[S]) -> Result<Self> {
        let indices = ids
            .iter()
            .map(|id| manifest.require_retriever(id.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Self::from_indices(indices)
    }

    pub fn from_indices(mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if indices.is_empty() {
            return Err(Error::EmptyPool);
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn ids(&self, manifest: &BenchmarkManifest) -> Vec<String> {
        self.indices
            .iter()
            .map(|&i| manifest.retriever_ids()[i].clone())
            .collect()
    }

    /// The pool with one member removed.
    pub fn without(&self, retriever: usize) -> Result<Self> {
        Self::from_indices(self.indices.iter().copied().filter(|&i| i != retriever).collect())
    }
}

pub(crate) fn best_rank(matrix: &RunMatrix, query: usize, pool: &Pool, condition: Condition) -> Option<u32> {
    pool.indices()
        .iter()
        .filter_map(|&r| matrix.scalar_rank(query, r, condition))
        .min()
}

/// Best text-only and image-only ranks of a query over the pool.
pub fn best_unimodal_ranks(
    matrix: &RunMatrix,
    query_id: &str,
    pool: &Pool,
) -> Result<(Option<u32>, Option<u32>)> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let q = matrix.manifest().require_query(query_id)?;
    Ok((
        best_rank(matrix, q, pool, Condition::Text),
        best_rank(matrix, q, pool, Condition::Image),
    ))
}

fn within(rank: Option<u32>, k: u32) -> bool {
    rank.is_some_and(|r| r <= k)
}

pub fn classify_query(
    best_text: Option<u32>,
    best_image: Option<u32>,
    best_mm: Option<u32>,
    k: u32,
) -> AuditLabel {
    let category = match (within(best_text, k), within(best_image, k)) {
        (true, true) => Category::ShortcutBoth,
        (true, false) => Category::ShortcutText,
        (false, true) => Category::ShortcutImage,
        (false, false) if within(best_mm, k) => Category::CompositionRequired,
        (false, false) => Category::Unresolved,
    };
    AuditLabel {
        category,
        best_text_rank: best_text,
        best_image_rank: best_image,
        best_mm_rank: best_mm,
    }
}

pub(crate) fn label_query(matrix: &RunMatrix, q: usize, pool: &Pool, k: u32) -> AuditLabel {
    classify_query(
        best_rank(matrix, q, pool, Condition::Text),
        best_rank(matrix, q, pool, Condition::Image),
        best_rank(matrix, q, pool, Condition::Multimodal),
        k,
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryLabel {
    pub query: String,
    #[serde(flatten)]
    pub label: AuditLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub benchmark_id: String,
    pub config: AuditConfig,
    pub pool: Vec<String>,
    /// One label per manifest query, in manifest order.
    pub labels: Vec<QueryLabel>,
    pub counts: CategoryCounts,
}

/// Labels every query of the matrix. Missing cells count as +inf.
pub fn audit_dataset(matrix: &RunMatrix, config: &AuditConfig, pool: &Pool) -> Result<AuditReport> {
    let manifest = matrix.manifest();
    config.validate(manifest)?;
    if let Some(&bad) = pool.indices().iter().find(|&&i| i >= manifest.num_retrievers()) {
        return Err(Error::UnknownRetriever(format!("#{bad}")));
    }
    let labels: Vec<QueryLabel> = (0..manifest.num_queries())
        .into_par_iter()
        .map(|q| QueryLabel {
            query: manifest.query_ids()[q].clone(),
            label: label_query(matrix, q, pool, config.cutoff),
        })
        .collect();
    let mut counts = CategoryCounts::default();
    for l in &labels {
        *counts.get_mut(l.label.category) += 1;
    }
    Ok(AuditReport {
        benchmark_id: manifest.benchmark_id().to_owned(),
        config: *config,
        pool: pool.ids(manifest),
        labels,
        counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub category: String,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub benchmark_id: String,
    pub cutoff: u32,
    pub pool: Vec<String>,
    pub total: usize,
    pub rows: Vec<SummaryRow>,
}

#[derive(Serialize, Deserialize)]
struct BestRanks {
    mm: Option<u32>,
    text: Option<u32>,
    image: Option<u32>,
}

#[derive(Serialize, Deserialize)]
struct LabelLine {
    query: String,
    category: Category,
    best_ranks: BestRanks,
}

impl AuditReport {
    pub fn total(&self) -> usize {
        self.labels.len()
    }

    /// Percentage of all queries, unrounded.
    pub fn percent(&self, count: usize) -> f64 {
        if self.labels.is_empty() {
            0.0
        } else {
            100.0 * count as f64 / self.labels.len() as f64
        }
    }

    /// Fraction of queries with a unimodal shortcut.
    pub fn shortcut_rate(&self) -> f64 {
        self.percent(self.counts.shortcut()) / 100.0
    }

    pub fn label_of(&self, query: &str) -> Option<&AuditLabel> {
        self.labels.iter().find(|l| l.query == query).map(|l| &l.label)
    }

    pub fn label_map(&self) -> HashMap<&str, Category> {
        self.labels
            .iter()
            .map(|l| (l.query.as_str(), l.label.category))
            .collect()
    }

    pub fn query_ids_in(&self, pred: impl Fn(Category) -> bool) -> Vec<String> {
        self.labels
            .iter()
            .filter(|l| pred(l.label.category))
            .map(|l| l.query.clone())
            .collect()
    }

    pub fn shortcut_free_ids(&self) -> Vec<String> {
        self.query_ids_in(Category::is_shortcut_free)
    }

    /// Stable identifier derived from the benchmark, cutoff, pool and labels.
    pub fn run_id(&self) -> String {
        let mut h = Fnv64::new();
        h.write(self.benchmark_id.as_bytes());
        h.write(&self.config.cutoff.to_le_bytes());
        for p in &self.pool {
            h.write(p.as_bytes());
            h.write(&[0]);
        }
        for l in &self.labels {
            h.write(l.query.as_bytes());
            h.write(l.label.category.as_str().as_bytes());
        }
        format!("audit-{:016x}", h.finish())
    }

    pub fn summary(&self) -> AuditSummary {
        let mut rows = vec![SummaryRow {
            category: "shortcut".into(),
            count: self.counts.shortcut(),
            percent: self.percent(self.counts.shortcut()),
        }];
        rows.extend(Category::ALL.iter().map(|&c| SummaryRow {
            category: c.as_str().into(),
            count: self.counts.get(c),
            percent: self.percent(self.counts.get(c)),
        }));
        AuditSummary {
            benchmark_id: self.benchmark_id.clone(),
            cutoff: self.config.cutoff,
            pool: self.pool.clone(),
            total: self.total(),
            rows,
        }
    }

    /// One `{query, category, best_ranks}` document per line.
    pub fn labels_jsonl(&self) -> String {
        let mut out = String::new();
        for l in &self.labels {
            let line = LabelLine {
                query: l.query.clone(),
                category: l.label.category,
                best_ranks: BestRanks {
                    mm: l.label.best_mm_rank,
                    text: l.label.best_text_rank,
                    image: l.label.best_image_rank,
                },
            };
            out.push_str(&serde_json::to_string(&line).expect("label serialises"));
            out.push('\n');
        }
        out
    }

    /// Aligned text table with one-decimal percentages.
    pub fn table_text(&self) -> String {
        let mut out = format!(
            "{} ({} queries, K={}, {} retrievers)\n{:<24} {:>8} {:>7}\n",
            self.benchmark_id,
            self.total(),
            self.config.cutoff,
            self.pool.len(),
            "category",
            "N",
            "%"
        );
        for row in self.summary().rows {
            let indent = if row.category.starts_with("shortcut_") { "  " } else { "" };
            out.push_str(&format!(
                "{:<24} {:>8} {:>7.1}\n",
                format!("{indent}{}", row.category),
                row.count,
                row.percent
            ));
        }
        out
    }
}

/// Reads a per-query label file written by [`AuditReport::labels_jsonl`].
/// Lines that are not label documents (e.g. a provenance header) are skipped.
pub fn read_labels_jsonl<R: BufRead>(source: R) -> Result<Vec<QueryLabel>> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|source| Error::Malformed {
                what: "label line",
                source,
            })
            .map_err(|e| e.at_line(i + 1))?;
        if value.get("query").is_none() {
            continue;
        }
        let parsed: LabelLine = serde_json::from_value(value)
            .map_err(|source| Error::Malformed {
                what: "label line",
                source,
            })
            .map_err(|e| e.at_line(i + 1))?;
        out.push(QueryLabel {
            query: parsed.query,
            label: AuditLabel {
                category: parsed.category,
                best_text_rank: parsed.best_ranks.text,
                best_image_rank: parsed.best_ranks.image,
                best_mm_rank: parsed.best_ranks.mm,
            },
        });
    }
    Ok(out)
}

/// FNV-1a, used for stable run identifiers.
struct Fnv64(u64);

impl Fnv64 {
    fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}
