//! Published per-retriever scores: one row per retriever, dataset, split and
//! metric with the MM score and three signed deltas, all in percent.

use std::io::Read;

use serde::{Deserialize, Serialize};

use super::{avg_comp_gap, AverageGap, ConditionScores};
use crate::error::{Error, Result};

const BUNDLED: &str = include_str!("../../fixtures/reference_scores.csv");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub dataset: String,
    pub metric: String,
    pub retriever: String,
    pub split: String,
    pub mm: f64,
    pub delta_mm_i: f64,
    pub delta_mm_t: f64,
    pub delta_i_t: f64,
}

impl ReferenceRow {
    /// Scores as fractions; I and T are recovered as `MM - delta`.
    pub fn condition_scores(&self) -> ConditionScores {
        ConditionScores {
            retriever_id: self.retriever.clone(),
            split_id: self.split.clone(),
            mm: self.mm / 100.0,
            text: (self.mm - self.delta_mm_t) / 100.0,
            image: (self.mm - self.delta_mm_i) / 100.0,
        }
    }

    /// Disagreement between the printed I-T delta and the one implied by the
    /// other two columns; bounded by the rounding of three printed values.
    pub fn delta_residual(&self) -> f64 {
        (self.delta_i_t - (self.delta_mm_t - self.delta_mm_i)).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapBar {
    pub dataset: String,
    pub split: String,
    #[serde(flatten)]
    pub gap: AverageGap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTable {
    rows: Vec<ReferenceRow>,
}

impl ReferenceTable {
    /// The transcription shipped with the crate.
    pub fn bundled() -> Result<Self> {
        Self::parse(BUNDLED.as_bytes())
    }

    pub fn parse<R: Read>(source: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
        let rows = reader
            .deserialize()
            .enumerate()
            .map(|(i, r)| r.map_err(|e| Error::Table(format!("row {}: {e}", i + 1))))
            .collect::<Result<Vec<ReferenceRow>>>()?;
        if rows.is_empty() {
            return Err(Error::Empty("reference table"));
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[ReferenceRow] {
        &self.rows
    }

    pub fn select(&self, dataset: &str, metric: &str, split: &str) -> Vec<&ReferenceRow> {
        self.rows
            .iter()
            .filter(|r| r.dataset == dataset && r.metric == metric && r.split == split)
            .collect()
    }

    fn distinct(&self, f: impl Fn(&ReferenceRow) -> &str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.iter().any(|x| x == f(r)) {
                out.push(f(r).to_owned());
            }
        }
        out
    }

    pub fn datasets(&self) -> Vec<String> {
        self.distinct(|r| &r.dataset)
    }

    pub fn metrics(&self) -> Vec<String> {
        self.distinct(|r| &r.metric)
    }

    pub fn splits(&self) -> Vec<String> {
        self.distinct(|r| &r.split)
    }

    /// Retriever-averaged composition gap for one dataset and split.
    pub fn avg_comp_gap(&self, dataset: &str, metric: &str, split: &str) -> Result<AverageGap> {
        let rows = self.select(dataset, metric, split);
        if rows.is_empty() {
            return Err(Error::Table(format!("no rows for {dataset}/{metric}/{split}")));
        }
        let scores: Vec<ConditionScores> = rows.iter().map(|r| r.condition_scores()).collect();
        avg_comp_gap(&scores)
    }

    /// Every (dataset, split) average for one metric, in table order.
    pub fn gap_bars(&self, metric: &str) -> Result<Vec<GapBar>> {
        let mut out = Vec::new();
        for dataset in self.datasets() {
            for split in self.splits() {
                if self.select(&dataset, metric, &split).is_empty() {
                    continue;
                }
                out.push(GapBar {
                    gap: self.avg_comp_gap(&dataset, metric, &split)?,
                    dataset: dataset.clone(),
                    split,
                });
            }
        }
        if out.is_empty() {
            return Err(Error::Table(format!("no rows for metric {metric}")));
        }
        Ok(out)
    }
}
