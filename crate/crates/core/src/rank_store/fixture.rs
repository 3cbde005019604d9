//! Synthetic benchmarks with planted audit outcomes.
//!
//! Each query gets a [`QueryPlan`]: for every condition, a band that must
//! contain the best rank over the pool. One randomly chosen "solver"
//! retriever lands inside the band; every other retriever is drawn from the
//! band's lower bound up to the end of the gallery, so the pool minimum is
//! guaranteed to fall inside the band.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AssetRefs, BenchmarkManifest, Condition, RunMatrix, RunMatrixBuilder, RunRecord};
use crate::audit::Category;
use crate::error::{Error, Result};

pub use crate::audit::CategoryCounts;

/// Inclusive range for the best rank over the pool; `hi = None` means the
/// last gallery position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankBand {
    pub lo: u32,
    pub hi: Option<u32>,
}

impl RankBand {
    pub fn new(lo: u32, hi: Option<u32>) -> Self {
        Self { lo, hi }
    }

    /// Best rank at most `k`.
    pub fn within(k: u32) -> Self {
        Self::new(1, Some(k))
    }

    /// Best rank strictly greater than `k`.
    pub fn beyond(k: u32) -> Self {
        Self::new(k + 1, None)
    }

    pub fn any() -> Self {
        Self::new(1, None)
    }
}

/// Per-condition bands for one planted query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryPlan {
    pub mm: RankBand,
    pub text: RankBand,
    pub image: RankBand,
}

impl QueryPlan {
    /// Bands that realise `category` exactly at cutoff `k`.
    pub fn for_category(category: Category, k: u32) -> Self {
        let (lo, hi) = (RankBand::within(k), RankBand::beyond(k));
        let (mm, text, image) = match category {
            Category::ShortcutBoth => (RankBand::any(), lo, lo),
            Category::ShortcutText => (RankBand::any(), lo, hi),
            Category::ShortcutImage => (RankBand::any(), hi, lo),
            Category::CompositionRequired => (lo, hi, hi),
            Category::Unresolved => (hi, hi, hi),
        };
        Self { mm, text, image }
    }

    fn band(&self, c: Condition) -> RankBand {
        match c {
            Condition::Multimodal => self.mm,
            Condition::Text => self.text,
            Condition::Image => self.image,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FixtureSpec {
    pub counts: CategoryCounts,
    pub pool_size: usize,
    pub gallery_size: u32,
    pub cutoff: u32,
    pub seed: u64,
    /// Relevant items per query (1 for single-target benchmarks).
    pub relevant_per_query: usize,
    /// Emit multimodal top-k lists of this depth for panel building.
    pub topk_depth: Option<u32>,
}

impl FixtureSpec {
    pub fn new(counts: CategoryCounts, pool_size: usize, gallery_size: u32, cutoff: u32, seed: u64) -> Self {
        Self {
            counts,
            pool_size,
            gallery_size,
            cutoff,
            seed,
            relevant_per_query: 1,
            topk_depth: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub manifest: BenchmarkManifest,
    pub records: Vec<RunRecord>,
    /// Planted category per query, empty when generated from raw plans.
    pub planted: Vec<(String, Category)>,
}

impl Fixture {
    pub fn matrix(&self) -> RunMatrix {
        let mut b = RunMatrixBuilder::new(self.manifest.clone());
        for r in &self.records {
            b.add(r.clone()).expect("fixture records are valid");
        }
        b.finish()
    }

    pub fn runs_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serialises"));
            out.push('\n');
        }
        out
    }

    pub fn planted_jsonl(&self) -> String {
        let mut out = String::new();
        for (q, c) in &self.planted {
            out.push_str(&serde_json::json!({"query": q, "category": c}).to_string());
            out.push('\n');
        }
        out
    }
}

/// Plants the requested category counts at `spec.cutoff`.
pub fn generate_fixture(spec: &FixtureSpec) -> Result<Fixture> {
    if spec.cutoff == 0 || spec.cutoff >= spec.gallery_size {
        return Err(Error::InfeasibleFixture(format!(
            "cutoff {} must satisfy 1 <= K < gallery size {}",
            spec.cutoff, spec.gallery_size
        )));
    }
    let mut labels: Vec<Category> = Category::ALL
        .iter()
        .flat_map(|&c| std::iter::repeat(c).take(spec.counts.get(c)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    labels.shuffle(&mut rng);
    let plans: Vec<QueryPlan> = labels
        .iter()
        .map(|&c| QueryPlan::for_category(c, spec.cutoff))
        .collect();
    let mut fixture = generate_with_rng(
        &plans,
        spec.pool_size,
        spec.gallery_size,
        spec.relevant_per_query,
        spec.topk_depth,
        &mut rng,
    )?;
    fixture.planted = fixture
        .manifest
        .query_ids()
        .iter()
        .cloned()
        .zip(labels)
        .collect();
    Ok(fixture)
}

/// Generates one query per plan; the lowest-level fixture entry point.
pub fn generate_from_plans(
    plans: &[QueryPlan],
    pool_size: usize,
    gallery_size: u32,
    relevant_per_query: usize,
    seed: u64,
) -> Result<Fixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_with_rng(plans, pool_size, gallery_size, relevant_per_query, None, &mut rng)
}

fn generate_with_rng(
    plans: &[QueryPlan],
    pool_size: usize,
    gallery_size: u32,
    relevant_per_query: usize,
    topk_depth: Option<u32>,
    rng: &mut ChaCha8Rng,
) -> Result<Fixture> {
    if pool_size == 0 {
        return Err(Error::InfeasibleFixture("pool size must be positive".into()));
    }
    if relevant_per_query == 0 || relevant_per_query > gallery_size as usize {
        return Err(Error::InfeasibleFixture(format!(
            "{relevant_per_query} relevant items do not fit a gallery of {gallery_size}"
        )));
    }
    // the best relevant rank can be at most this and still leave room for the rest
    let last_min = gallery_size - (relevant_per_query as u32 - 1);
    for plan in plans {
        for c in Condition::ALL {
            let band = plan.band(c);
            let hi = band.hi.unwrap_or(gallery_size).min(last_min);
            if band.lo == 0 || band.lo > hi {
                return Err(Error::InfeasibleFixture(format!(
                    "band [{}, {:?}] for condition {c} is empty in a gallery of {gallery_size}",
                    band.lo, band.hi
                )));
            }
        }
    }

    let width = plans.len().max(1).to_string().len().max(4);
    let retrievers: Vec<String> = (0..pool_size).map(|i| format!("r{i:02}")).collect();
    let mut queries = Vec::with_capacity(plans.len());
    let mut records = Vec::with_capacity(plans.len() * pool_size * 3);

    for (qi, plan) in plans.iter().enumerate() {
        let qid = format!("q{qi:0width$}");
        let relevant: Vec<String> = (0..relevant_per_query).map(|j| format!("{qid}-t{j}")).collect();
        for c in Condition::ALL {
            let band = plan.band(c);
            let hi = band.hi.unwrap_or(gallery_size).min(last_min);
            let solver = rng.gen_range(0..pool_size);
            for (ri, rid) in retrievers.iter().enumerate() {
                let top = if ri == solver { hi } else { last_min };
                let best = rng.gen_range(band.lo..=top);
                let ranks = sample_ranks(rng, best, gallery_size, relevant_per_query);
                let mut record = RunRecord::new(qid.clone(), rid.clone(), c, ranks);
                if let (Condition::Multimodal, Some(depth)) = (c, topk_depth) {
                    record.topk_items = Some(topk_list(rng, &qid, &relevant, &record.relevant_ranks, depth));
                }
                records.push(record);
            }
        }
        let assets = AssetRefs {
            reference: format!("{qid}/reference.png"),
            text: format!("edit instruction for {qid}"),
            targets: (0..relevant_per_query).map(|j| format!("{qid}/target{j}.png")).collect(),
        };
        queries.push((qid, relevant, Some(assets)));
    }

    let manifest = BenchmarkManifest::new("synthetic", gallery_size, queries, retrievers)?;
    Ok(Fixture {
        manifest,
        records,
        planted: Vec::new(),
    })
}

/// `best` plus `count - 1` further distinct ranks in `(best, gallery]`.
fn sample_ranks(rng: &mut ChaCha8Rng, best: u32, gallery: u32, count: usize) -> Vec<u32> {
    let mut ranks = vec![best];
    if count > 1 {
        let room = (gallery - best) as usize;
        let mut rest: Vec<u32> = index::sample(rng, room, count - 1)
            .into_iter()
            .map(|i| best + 1 + i as u32)
            .collect();
        rest.sort_unstable();
        ranks.extend(rest);
    }
    ranks
}

fn topk_list(rng: &mut ChaCha8Rng, qid: &str, relevant: &[String], ranks: &[u32], depth: u32) -> Vec<String> {
    // distractors come from a small per-query pool so lists overlap across retrievers
    let pool = 2 * depth as usize;
    let mut distractors = index::sample(rng, pool, depth as usize).into_iter();
    (1..=depth)
        .map(|pos| match ranks.iter().position(|&r| r == pos) {
            Some(j) => relevant[j].clone(),
            None => format!("{qid}-d{}", distractors.next().expect("enough distractors")),
        })
        .collect()
}
