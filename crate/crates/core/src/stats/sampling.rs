use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratifiedSample<C: Ord> {
    /// Sampled query ids per stratum, sorted.
    pub strata: BTreeMap<C, Vec<String>>,
    /// Requested minus returned, for strata smaller than the request.
    pub shortfall: BTreeMap<C, usize>,
}

impl<C: Ord> StratifiedSample<C> {
    pub fn all_ids(&self) -> Vec<String> {
        self.strata.values().flatten().cloned().collect()
    }
}

/// Uniform sampling without replacement inside each requested stratum.
///
/// Each stratum draws from its own ChaCha8 stream (its position in
/// `requests`), so one stratum's request does not perturb another's sample.
/// The result does not depend on the order of `labels`.
pub fn stratified_sample<C: Ord + Clone>(
    labels: &[(String, C)],
    requests: &BTreeMap<C, usize>,
    seed: u64,
) -> StratifiedSample<C> {
    let mut strata = BTreeMap::new();
    let mut shortfall = BTreeMap::new();
    for (stream, (category, &want)) in requests.iter().enumerate() {
        let mut members: Vec<&String> = labels
            .iter()
            .filter(|(_, c)| c == category)
            .map(|(q, _)| q)
            .collect();
        members.sort();
        members.dedup();
        let take = want.min(members.len());
        if take < want {
            shortfall.insert(category.clone(), want - take);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream as u64);
        let mut chosen: Vec<String> = index::sample(&mut rng, members.len(), take)
            .into_iter()
            .map(|i| members[i].clone())
            .collect();
        chosen.sort();
        strata.insert(category.clone(), chosen);
    }
    StratifiedSample { strata, shortfall }
}
