use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Pool;
use crate::error::{CellKey, Error, Result};
use crate::rank_store::{Condition, RunMatrix};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelItem {
    pub item_id: String,
    /// Best position of the item over all contributing lists.
    pub best_rank: u32,
    /// Number of pool retrievers whose top list contains the item.
    pub retrievers: usize,
}

/// Aggregate multimodal panel shown next to a triplet during annotation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Panel {
    pub query_id: String,
    pub items: Vec<PanelItem>,
}

impl Panel {
    pub fn item_ids(&self) -> Vec<String> {
        self.items.iter().map(|i| i.item_id.clone()).collect()
    }
}

/// Deduplicated union of the pool's multimodal top-`depth` lists, ordered by
/// best rank, then by how many retrievers returned the item (more first),
/// then by item id.
pub fn build_panel(matrix: &RunMatrix, query_id: &str, depth: u32, pool: &Pool) -> Result<Panel> {
    let manifest = matrix.manifest();
    let q = manifest.require_query(query_id)?;
    let mut seen: BTreeMap<&str, (u32, usize)> = BTreeMap::new();
    for &r in pool.indices() {
        let items = matrix
            .cell(q, r, Condition::Multimodal)
            .and_then(|rec| rec.topk_items.as_ref())
            .ok_or_else(|| {
                Error::MissingTopK(CellKey {
                    query: query_id.to_owned(),
                    retriever: manifest.retriever_ids()[r].clone(),
                    condition: Condition::Multimodal,
                })
            })?;
        for (pos, item) in items.iter().take(depth as usize).enumerate() {
            let entry = seen.entry(item.as_str()).or_insert((u32::MAX, 0));
            entry.0 = entry.0.min(pos as u32 + 1);
            entry.1 += 1;
        }
    }
    let mut items: Vec<PanelItem> = seen
        .into_iter()
        .map(|(id, (best_rank, retrievers))| PanelItem {
            item_id: id.to_owned(),
            best_rank,
            retrievers,
        })
        .collect();
    items.sort_by(|a, b| {
        a.best_rank
            .cmp(&b.best_rank)
            .then(b.retrievers.cmp(&a.retrievers))
            .then_with(|| a.item_id.cmp(&b.item_id))
    });
    Ok(Panel {
        query_id: query_id.to_owned(),
        items,
    })
}
