//! Benchmark manifests, per-condition rank exports and the run matrix that
//! every other module reads from.
//!
//! Ranks are 1-based positions in the full gallery ordering. Only the ranks
//! of relevant items are stored (plus an optional multimodal top-k list used
//! to build annotation panels); full orderings are never materialised.

mod fixture;
mod manifest;
mod runs;
mod scores;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use fixture::{
    generate_fixture, generate_from_plans, CategoryCounts, Fixture, FixtureSpec, QueryPlan,
    RankBand,
};
pub use manifest::{load_manifest, AssetRefs, BenchmarkManifest};
pub use runs::{
    ingest_runs, validate_matrix, Completeness, MissingPolicy, RunMatrix, RunMatrixBuilder,
    RunRecord, ValidationReport,
};
pub use scores::ranks_from_scores;

/// Which parts of the composed query were given to the retriever.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Condition {
    /// Reference image and edit text together.
    #[serde(rename = "mm")]
    Multimodal,
    /// Edit text only (reference image masked upstream).
    #[serde(rename = "text")]
    Text,
    /// Reference image only.
    #[serde(rename = "image")]
    Image,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Multimodal, Condition::Text, Condition::Image];

    pub(crate) fn index(self) -> usize {
        match self {
            Condition::Multimodal => 0,
            Condition::Text => 1,
            Condition::Image => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Multimodal => "mm",
            Condition::Text => "text",
            Condition::Image => "image",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mm" => Ok(Condition::Multimodal),
            "text" => Ok(Condition::Text),
            "image" => Ok(Condition::Image),
            other => Err(format!("unknown condition `{other}` (expected mm, text or image)")),
        }
    }
}
