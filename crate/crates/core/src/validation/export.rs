use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::FinalLabel;
use crate::audit::AuditReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitId {
    Full,
    Sf,
    V,
}

impl SplitId {
    pub const ALL: [SplitId; 3] = [SplitId::Full, SplitId::Sf, SplitId::V];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitId::Full => "full",
            SplitId::Sf => "sf",
            SplitId::V => "v",
        }
    }
}

impl fmt::Display for SplitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(SplitId::Full),
            "sf" => Ok(SplitId::Sf),
            "v" => Ok(SplitId::V),
            _ => Err(Error::UnknownSplit(s.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitProvenance {
    pub audit_run_id: String,
    pub cutoff: u32,
    pub pool: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregation: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub batches: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub benchmark_id: String,
    pub split: SplitId,
    pub query_ids: Vec<String>,
    pub provenance: SplitProvenance,
}

/// Final labels plus the context recorded in the V manifest.
#[derive(Debug, Clone, Copy)]
pub struct Aggregated<'a> {
    pub labels: &'a BTreeMap<String, FinalLabel>,
    pub policy: &'a str,
    pub batches: &'a [String],
}

/// One split manifest. Full and SF need only the audit; V needs final labels
/// and contains the audited SF queries judged valid. Query ids keep manifest
/// order.
pub fn export_split(report: &AuditReport, aggregated: Option<Aggregated<'_>>, split: SplitId) -> Result<SplitManifest> {
    let mut provenance = SplitProvenance {
        audit_run_id: report.run_id(),
        cutoff: report.config.cutoff,
        pool: report.pool.clone(),
        aggregation: None,
        batches: Vec::new(),
    };
    let query_ids = match split {
        SplitId::Full => report.labels.iter().map(|l| l.query.clone()).collect(),
        SplitId::Sf => report.shortcut_free_ids(),
        SplitId::V => {
            let agg = aggregated.ok_or(Error::NoAggregation)?;
            provenance.aggregation = Some(agg.policy.to_owned());
            provenance.batches = agg.batches.to_vec();
            report
                .shortcut_free_ids()
                .into_iter()
                .filter(|q| agg.labels.get(q).is_some_and(|l| l.valid))
                .collect()
        }
    };
    Ok(SplitManifest {
        benchmark_id: report.benchmark_id.clone(),
        split,
        query_ids,
        provenance,
    })
}

/// Full, SF and V together; the inclusions V ⊆ SF ⊆ Full are checked.
pub fn export_splits(report: &AuditReport, aggregated: Aggregated<'_>) -> Result<[SplitManifest; 3]> {
    let full = export_split(report, Some(aggregated), SplitId::Full)?;
    let sf = export_split(report, Some(aggregated), SplitId::Sf)?;
    let v = export_split(report, Some(aggregated), SplitId::V)?;
    let set = |m: &SplitManifest| m.query_ids.iter().cloned().collect::<BTreeSet<_>>();
    let (f, s, vv) = (set(&full), set(&sf), set(&v));
    if !vv.is_subset(&s) || !s.is_subset(&f) {
        return Err(Error::Misaligned("exported splits violate V ⊆ SF ⊆ Full".into()));
    }
    Ok([full, sf, v])
}
