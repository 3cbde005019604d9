use std::fmt;

use thiserror::Error;

use crate::rank_store::Condition;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Identifies one (query, retriever, condition) cell of a run matrix.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct CellKey {
    pub query: String,
    pub retriever: String,
    pub condition: Condition,
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.query, self.retriever, self.condition)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed {what}: {source}")]
    Malformed {
        what: &'static str,
        #[source]
        source: serde_json::Error,
    },

    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },

    #[error("query `{0}` has an empty relevance set")]
    EmptyRelevance(String),

    #[error("gallery size {gallery_size} is smaller than the relevance set of query `{query}` ({relevant})")]
    GalleryTooSmall {
        query: String,
        relevant: usize,
        gallery_size: u32,
    },

    #[error("unknown query `{0}`")]
    UnknownQuery(String),

    #[error("unknown retriever `{0}`")]
    UnknownRetriever(String),

    #[error("unknown item `{0}`")]
    UnknownItem(String),

    #[error("rank {rank} of cell {cell} is outside [1, {gallery_size}]")]
    RankOutOfRange {
        cell: CellKey,
        rank: u32,
        gallery_size: u32,
    },

    #[error("cell {cell} lists rank {rank} more than once")]
    RepeatedRank { cell: CellKey, rank: u32 },

    #[error("duplicate record for cell {0}")]
    DuplicateCell(CellKey),

    #[error("cell {cell} has {got} relevant ranks, manifest lists {expected} relevant items")]
    RankCardinality {
        cell: CellKey,
        got: usize,
        expected: usize,
    },

    #[error("cell {cell} top-k list is invalid: {reason}")]
    InvalidTopK { cell: CellKey, reason: String },

    #[error("matrix is incomplete: {count} missing cell(s), first {first}")]
    MissingCells { count: usize, first: CellKey },

    #[error("non-finite similarity for item `{0}`")]
    NonFinite(String),

    #[error("retriever pool is empty")]
    EmptyPool,

    #[error("leave-one-out analysis needs a pool of at least two retrievers")]
    PoolTooSmall,

    #[error("missing multimodal top-k list for {0}")]
    MissingTopK(CellKey),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("relevant ranks must be strictly increasing, got {0:?}")]
    NonIncreasingRanks(Vec<u32>),

    #[error("misaligned input: {0}")]
    Misaligned(String),

    #[error("every composition gap is undefined (multimodal score is zero for all retrievers)")]
    AllUndefined,

    #[error("reference table: {0}")]
    Table(String),

    #[error("infeasible fixture: {0}")]
    InfeasibleFixture(String),

    #[error("unknown annotator `{0}`")]
    UnknownAnnotator(String),

    #[error("query `{query}` was never served to annotator `{annotator}`")]
    UnservedTask { query: String, annotator: String },

    #[error("invalid decision trace: {0}")]
    DecisionTrace(String),

    #[error("record for query `{0}` is marked valid but lists issues")]
    ValidWithIssues(String),

    #[error("record for query `{0}` is marked invalid but lists no issue")]
    InvalidWithoutIssues(String),

    #[error("query `{query}` has {got} judgment(s), quorum is {needed}")]
    QuorumUnmet {
        query: String,
        got: usize,
        needed: usize,
    },

    #[error("query `{0}` has judgments from several annotators and no single assignee")]
    AmbiguousAssignee(String),

    #[error("validated split requested before any judgments were aggregated")]
    NoAggregation,

    #[error("unknown split `{0}`")]
    UnknownSplit(String),

    #[error("asset path `{0}` is not inside the asset directory")]
    AssetOutsideRoot(String),

    #[error("no asset directory configured")]
    NoAssetDir,
}

impl Error {
    pub(crate) fn at_line(self, line: usize) -> Self {
        Error::AtLine {
            line,
            source: Box::new(self),
        }
    }

    /// Strips any line context, returning the underlying error.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtLine { source, .. } => source.root(),
            other => other,
        }
    }
}
