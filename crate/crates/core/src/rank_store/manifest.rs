use std::collections::{BTreeSet, HashMap};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where the annotation UI finds the parts of a triplet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetRefs {
    pub reference: String,
    pub text: String,
    #[serde(default)]
    pub targets: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestDoc {
    benchmark_id: String,
    gallery_size: u32,
    queries: Vec<QueryDoc>,
    retrievers: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct QueryDoc {
    id: String,
    relevant: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    assets: Option<AssetRefs>,
}

/// A benchmark: its queries, their relevant gallery items and the retriever
/// pool whose rank exports will be ingested.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchmarkManifest {
    benchmark_id: String,
    gallery_size: u32,
    query_ids: Vec<String>,
    retriever_ids: Vec<String>,
    relevance: Vec<BTreeSet<String>>,
    assets: Vec<Option<AssetRefs>>,
    query_index: HashMap<String, usize>,
    retriever_index: HashMap<String, usize>,
}

/// One query of a manifest under construction: `(id, relevant items, assets)`.
pub type QuerySpec = (String, Vec<String>, Option<AssetRefs>);

impl BenchmarkManifest {
    /// Builds a manifest, checking every invariant. Order of queries and
    /// retrievers is preserved.
    pub fn new(
        benchmark_id: impl Into<String>,
        gallery_size: u32,
        queries: Vec<QuerySpec>,
        retrievers: Vec<String>,
    ) -> Result<Self> {
        if gallery_size == 0 {
            return Err(Error::InvalidConfig("gallery_size must be positive".into()));
        }
        let mut query_ids = Vec::with_capacity(queries.len());
        let mut relevance = Vec::with_capacity(queries.len());
        let mut assets = Vec::with_capacity(queries.len());
        let mut query_index = HashMap::with_capacity(queries.len());
        for (id, relevant, asset) in queries {
            if query_index.insert(id.clone(), query_ids.len()).is_some() {
                return Err(Error::DuplicateId { kind: "query", id });
            }
            if relevant.is_empty() {
                return Err(Error::EmptyRelevance(id));
            }
            let set: BTreeSet<String> = relevant.iter().cloned().collect();
            if set.len() != relevant.len() {
                let dup = first_duplicate(&relevant).unwrap_or_default();
                return Err(Error::DuplicateId {
                    kind: "relevant item",
                    id: format!("{dup} (query {id})"),
                });
            }
            if set.len() > gallery_size as usize {
                return Err(Error::GalleryTooSmall {
                    query: id,
                    relevant: set.len(),
                    gallery_size,
                });
            }
            query_ids.push(id);
            relevance.push(set);
            assets.push(asset);
        }
        let mut retriever_index = HashMap::with_capacity(retrievers.len());
        for (i, r) in retrievers.iter().enumerate() {
            if retriever_index.insert(r.clone(), i).is_some() {
                return Err(Error::DuplicateId {
                    kind: "retriever",
                    id: r.clone(),
                });
            }
        }
        Ok(Self {
            benchmark_id: benchmark_id.into(),
            gallery_size,
            query_ids,
            retriever_ids: retrievers,
            relevance,
            assets,
            query_index,
            retriever_index,
        })
    }

    pub fn benchmark_id(&self) -> &str {
        &self.benchmark_id
    }

    pub fn gallery_size(&self) -> u32 {
        self.gallery_size
    }

    pub fn query_ids(&self) -> &[String] {
        &self.query_ids
    }

    pub fn retriever_ids(&self) -> &[String] {
        &self.retriever_ids
    }

    pub fn num_queries(&self) -> usize {
        self.query_ids.len()
    }

    pub fn num_retrievers(&self) -> usize {
        self.retriever_ids.len()
    }

    pub fn query_index(&self, id: &str) -> Option<usize> {
        self.query_index.get(id).copied()
    }

    pub fn retriever_index(&self, id: &str) -> Option<usize> {
        self.retriever_index.get(id).copied()
    }

    pub(crate) fn require_query(&self, id: &str) -> Result<usize> {
        self.query_index(id)
            .ok_or_else(|| Error::UnknownQuery(id.to_owned()))
    }

    pub(crate) fn require_retriever(&self, id: &str) -> Result<usize> {
        self.retriever_index(id)
            .ok_or_else(|| Error::UnknownRetriever(id.to_owned()))
    }

    /// Relevant gallery items of the query at `index` (manifest order).
    pub fn relevant(&self, index: usize) -> &BTreeSet<String> {
        &self.relevance[index]
    }

    pub fn assets(&self, index: usize) -> Option<&AssetRefs> {
        self.assets[index].as_ref()
    }

    /// Serialises to the manifest document format.
    pub fn to_json(&self) -> String {
        let doc = ManifestDoc {
            benchmark_id: self.benchmark_id.clone(),
            gallery_size: self.gallery_size,
            queries: self
                .query_ids
                .iter()
                .zip(&self.relevance)
                .zip(&self.assets)
                .map(|((id, rel), assets)| QueryDoc {
                    id: id.clone(),
                    relevant: rel.iter().cloned().collect(),
                    assets: assets.clone(),
                })
                .collect(),
            retrievers: self.retriever_ids.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("manifest serialises")
    }
}

fn first_duplicate(items: &[String]) -> Option<String> {
    let mut seen = BTreeSet::new();
    items.iter().find(|i| !seen.insert(*i)).cloned()
}

/// Parses a manifest document.
pub fn load_manifest<R: Read>(source: R) -> Result<BenchmarkManifest> {
    let doc: ManifestDoc = serde_json::from_reader(source).map_err(|source| Error::Malformed {
        what: "manifest",
        source,
    })?;
    BenchmarkManifest::new(
        doc.benchmark_id,
        doc.gallery_size,
        doc.queries
            .into_iter()
            .map(|q| (q.id, q.relevant, q.assets))
            .collect(),
        doc.retrievers,
    )
}
