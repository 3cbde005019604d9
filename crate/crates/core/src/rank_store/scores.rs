use std::collections::HashSet;

use crate::error::{Error, Result};

/// Ranks of the `relevant` items within a full-gallery similarity list.
///
/// An item's rank is one plus the number of items with strictly greater
/// similarity plus the number of equally similar items whose id sorts before
/// it. The result is ascending and independent of the order of `scores`.
pub fn ranks_from_scores<S: AsRef<str>>(scores: &[(S, f64)], relevant: &[S]) -> Result<Vec<u32>> {
    if let Some((id, _)) = scores.iter().find(|(_, s)| !s.is_finite()) {
        return Err(Error::NonFinite(id.as_ref().to_owned()));
    }
    let mut seen = HashSet::with_capacity(scores.len());
    for (id, _) in scores {
        if !seen.insert(id.as_ref()) {
            return Err(Error::DuplicateId {
                kind: "scored item",
                id: id.as_ref().to_owned(),
            });
        }
    }
    let mut ranks = Vec::with_capacity(relevant.len());
    for target in relevant {
        let target = target.as_ref();
        let (_, target_score) = scores
            .iter()
            .find(|(id, _)| id.as_ref() == target)
            .ok_or_else(|| Error::UnknownItem(target.to_owned()))?;
        let ahead = scores
            .iter()
            .filter(|(id, s)| *s > *target_score || (*s == *target_score && id.as_ref() < target))
            .count();
        ranks.push(ahead as u32 + 1);
    }
    ranks.sort_unstable();
    ranks.dedup();
    Ok(ranks)
}
