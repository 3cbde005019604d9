use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{BenchmarkManifest, Condition};
use crate::error::{CellKey, Error, Result};

/// Ranks of one query's relevant items for one retriever under one condition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    #[serde(rename = "query")]
    pub query_id: String,
    #[serde(rename = "retriever")]
    pub retriever_id: String,
    pub condition: Condition,
    pub relevant_ranks: Vec<u32>,
    #[serde(rename = "topk", default, skip_serializing_if = "Option::is_none")]
    pub topk_items: Option<Vec<String>>,
}

impl RunRecord {
    pub fn new(
        query_id: impl Into<String>,
        retriever_id: impl Into<String>,
        condition: Condition,
        relevant_ranks: Vec<u32>,
    ) -> Self {
        Self {
            query_id: query_id.into(),
            retriever_id: retriever_id.into(),
            condition,
            relevant_ranks,
            topk_items: None,
        }
    }

    pub fn with_topk(mut self, items: Vec<String>) -> Self {
        self.topk_items = Some(items);
        self
    }

    /// The scalar rank of the query: the best-ranked relevant item.
    pub fn scalar_rank(&self) -> u32 {
        self.relevant_ranks[0]
    }

    pub fn key(&self) -> CellKey {
        CellKey {
            query: self.query_id.clone(),
            retriever: self.retriever_id.clone(),
            condition: self.condition,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Completeness {
    Complete,
    Partial,
}

/// How downstream operations treat cells absent from the matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    #[default]
    Strict,
    /// Missing unimodal cells count as rank +inf; a missing multimodal cell is
    /// an unsolved query for that retriever.
    AllowMissing,
}

impl FromStr for MissingPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strict" => Ok(MissingPolicy::Strict),
            "allow-missing" | "allow_missing" => Ok(MissingPolicy::AllowMissing),
            other => Err(format!("unknown missing-data policy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub missing: Vec<CellKey>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.missing.is_empty()
    }
}

/// Immutable (query × retriever × condition) table of rank records.
#[derive(Debug, Clone)]
pub struct RunMatrix {
    manifest: BenchmarkManifest,
    cells: Vec<Option<RunRecord>>,
    completeness: Completeness,
}

impl RunMatrix {
    fn slot(manifest: &BenchmarkManifest, q: usize, r: usize, c: Condition) -> usize {
        (q * manifest.num_retrievers() + r) * 3 + c.index()
    }

    pub fn manifest(&self) -> &BenchmarkManifest {
        &self.manifest
    }

    pub fn completeness(&self) -> Completeness {
        self.completeness
    }

    /// Record for a cell addressed by manifest indices.
    pub fn cell(&self, query: usize, retriever: usize, condition: Condition) -> Option<&RunRecord> {
        self.cells[Self::slot(&self.manifest, query, retriever, condition)].as_ref()
    }

    pub fn get(&self, query_id: &str, retriever_id: &str, condition: Condition) -> Option<&RunRecord> {
        let q = self.manifest.query_index(query_id)?;
        let r = self.manifest.retriever_index(retriever_id)?;
        self.cell(q, r, condition)
    }

    /// Scalar (min relevant) rank of a cell; `None` stands for +inf.
    pub fn scalar_rank(&self, query: usize, retriever: usize, condition: Condition) -> Option<u32> {
        self.cell(query, retriever, condition).map(RunRecord::scalar_rank)
    }

    pub fn records(&self) -> impl Iterator<Item = &RunRecord> {
        self.cells.iter().flatten()
    }

    pub fn missing_cells(&self) -> Vec<CellKey> {
        let m = &self.manifest;
        let mut out = Vec::new();
        for (q, qid) in m.query_ids().iter().enumerate() {
            for (r, rid) in m.retriever_ids().iter().enumerate() {
                for c in Condition::ALL {
                    if self.cell(q, r, c).is_none() {
                        out.push(CellKey {
                            query: qid.clone(),
                            retriever: rid.clone(),
                            condition: c,
                        });
                    }
                }
            }
        }
        out
    }

    /// Writes all records as line-delimited documents in manifest order.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for record in self.records() {
            serde_json::to_writer(&mut out, record).expect("record serialises");
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Accumulates records into a [`RunMatrix`], validating each on insertion.
pub struct RunMatrixBuilder {
    manifest: BenchmarkManifest,
    cells: Vec<Option<RunRecord>>,
    max_topk: Option<usize>,
}

impl RunMatrixBuilder {
    pub fn new(manifest: BenchmarkManifest) -> Self {
        let n = manifest.num_queries() * manifest.num_retrievers() * 3;
        Self {
            manifest,
            cells: vec![None; n],
            max_topk: None,
        }
    }

    /// Rejects top-k lists longer than `depth`.
    pub fn max_topk(mut self, depth: usize) -> Self {
        self.max_topk = Some(depth);
        self
    }

    pub fn manifest(&self) -> &BenchmarkManifest {
        &self.manifest
    }

    pub fn add(&mut self, mut record: RunRecord) -> Result<()> {
        let q = self.manifest.require_query(&record.query_id)?;
        let r = self.manifest.require_retriever(&record.retriever_id)?;
        let gallery_size = self.manifest.gallery_size();
        let expected = self.manifest.relevant(q).len();
        if record.relevant_ranks.len() != expected {
            return Err(Error::RankCardinality {
                cell: record.key(),
                got: record.relevant_ranks.len(),
                expected,
            });
        }
        record.relevant_ranks.sort_unstable();
        for w in record.relevant_ranks.windows(2) {
            if w[0] == w[1] {
                return Err(Error::RepeatedRank {
                    cell: record.key(),
                    rank: w[0],
                });
            }
        }
        if let Some(&bad) = record
            .relevant_ranks
            .iter()
            .find(|&&rank| rank == 0 || rank > gallery_size)
        {
            return Err(Error::RankOutOfRange {
                cell: record.key(),
                rank: bad,
                gallery_size,
            });
        }
        if let Some(items) = &record.topk_items {
            if let Some(depth) = self.max_topk {
                if items.len() > depth {
                    return Err(Error::InvalidTopK {
                        cell: record.key(),
                        reason: format!("{} items exceeds panel depth {depth}", items.len()),
                    });
                }
            }
            let mut seen = BTreeSet::new();
            if let Some(dup) = items.iter().find(|i| !seen.insert(i.as_str())) {
                return Err(Error::InvalidTopK {
                    cell: record.key(),
                    reason: format!("item `{dup}` listed twice"),
                });
            }
        }
        let slot = RunMatrix::slot(&self.manifest, q, r, record.condition);
        if self.cells[slot].is_some() {
            return Err(Error::DuplicateCell(record.key()));
        }
        self.cells[slot] = Some(record);
        Ok(())
    }

    /// Reads line-delimited records; errors carry the 1-based line number.
    pub fn add_jsonl<R: BufRead>(&mut self, source: R) -> Result<()> {
        for (i, line) in source.lines().enumerate() {
            let line = line?;
            // blank lines and a provenance header written by the CLI carry no record
            if line.trim().is_empty() || line.starts_with("{\"provenance\"") {
                continue;
            }
            let record: RunRecord = serde_json::from_str(&line)
                .map_err(|source| Error::Malformed {
                    what: "run record",
                    source,
                })
                .map_err(|e| e.at_line(i + 1))?;
            self.add(record).map_err(|e| e.at_line(i + 1))?;
        }
        Ok(())
    }

    pub fn finish(self) -> RunMatrix {
        let completeness = if self.cells.iter().all(Option::is_some) {
            Completeness::Complete
        } else {
            Completeness::Partial
        };
        RunMatrix {
            manifest: self.manifest,
            cells: self.cells,
            completeness,
        }
    }
}

/// Builds a matrix from a line-delimited record stream.
pub fn ingest_runs<R: BufRead>(source: R, manifest: BenchmarkManifest) -> Result<RunMatrix> {
    let mut builder = RunMatrixBuilder::new(manifest);
    builder.add_jsonl(source)?;
    Ok(builder.finish())
}

/// Checks completeness against the missing-data policy.
pub fn validate_matrix(matrix: &RunMatrix, policy: MissingPolicy) -> Result<ValidationReport> {
    if matrix.completeness() == Completeness::Complete {
        return Ok(ValidationReport::default());
    }
    let missing = matrix.missing_cells();
    match policy {
        MissingPolicy::Strict => Err(Error::MissingCells {
            count: missing.len(),
            first: missing[0].clone(),
        }),
        MissingPolicy::AllowMissing => Ok(ValidationReport { missing }),
    }
}
