//! Acceptance suite. Runs every criterion, prints one line each and exits
//! non-zero if any failed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use cir_audit::audit::{
    audit_dataset, cutoff_sweep, loo_analysis, AuditConfig, AuditReport, Category, CategoryCounts, Pool,
};
use cir_audit::metrics::{
    comp_gap, condition_scores, metric, Cutoff, MetricKind, QuerySplit, ReferenceTable,
};
use cir_audit::rank_store::{
    generate_fixture, generate_from_plans, Condition, Fixture, FixtureSpec, QueryPlan, RankBand,
};
use cir_audit::stats::{
    bootstrap_mean_ci, cohen_kappa, fleiss_kappa, krippendorff_alpha_nominal, paired_delta_ci, stratified_sample,
    BootstrapConfig, LabelMatrix,
};
use cir_audit::validation::{
    aggregate_labels, export_split, export_splits, issue_distribution, replay, validity_summary, Aggregated,
    AggregationPolicy, AnnotationRecord, BatchPlan, FinalLabel, IssueLabel, JudgmentLog, SplitId, ValidationService,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn counts(both: usize, text: usize, image: usize, comp: usize, unres: usize) -> CategoryCounts {
    CategoryCounts {
        shortcut_both: both,
        shortcut_text: text,
        shortcut_image: image,
        composition_required: comp,
        unresolved: unres,
    }
}

fn all_pool(f: &Fixture) -> Pool {
    Pool::all(&f.manifest).unwrap()
}

// ---------------------------------------------------------------------------
// 1, 2: composition gap bars from the bundled score table

fn gap_bars(metric: &str, expected: &[(&str, [f64; 3])], tol: f64) -> Check {
    let table = ReferenceTable::bundled().map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (dataset, bars) in expected {
        for (split, want) in ["full", "sf", "v"].iter().zip(bars) {
            let g = table.avg_comp_gap(dataset, metric, split).map_err(|e| e.to_string())?;
            ensure!(g.defined == 11 && g.undefined == 0, "{dataset}/{split}: {} defined", g.defined);
            let err = (g.mean - want).abs();
            worst = worst.max(err);
            ensure!(err <= tol, "{dataset}/{split}: {:.4} vs {want}", g.mean);
        }
    }
    Ok(format!("12 bars, max |error| {worst:.4}"))
}

fn criterion_1() -> Check {
    gap_bars(
        "ndcg",
        &[
            ("cirr", [0.137, 0.313, 0.361]),
            ("fashioniq", [0.298, 0.378, 0.477]),
            ("lasco", [0.069, 0.079, 0.209]),
            ("circo", [0.470, 0.569, 0.562]),
        ],
        0.015,
    )
}

fn criterion_2() -> Check {
    let detail = gap_bars(
        "mrr",
        &[
            ("cirr", [0.201, 0.792, 0.826]),
            ("fashioniq", [0.506, 0.904, 0.921]),
            ("lasco", [0.033, 0.453, 0.681]),
            ("circo", [0.700, 0.921, 0.916]),
        ],
        0.015,
    )?;
    let table = ReferenceTable::bundled().map_err(|e| e.to_string())?;
    let e5 = table
        .select("cirr", "mrr", "full")
        .into_iter()
        .find(|r| r.retriever == "E5-Omni")
        .ok_or("no E5-Omni row")?;
    let g = comp_gap(&e5.condition_scores()).value().ok_or("undefined")?;
    ensure!(g < 0.0, "E5-Omni CIRR full MRR gap {g} should be negative");
    Ok(format!("{detail}; E5-Omni cirr/full gap {g:.3} kept unclamped"))
}

// ---------------------------------------------------------------------------
// 3: audit counting

/// Label from raw records, independent of the matrix and audit code.
fn oracle_labels(f: &Fixture, pool: &BTreeSet<&str>, k: u32) -> Vec<Category> {
    let mut best: HashMap<(&str, Condition), u32> = HashMap::new();
    for r in &f.records {
        if !pool.contains(r.retriever_id.as_str()) {
            continue;
        }
        let rank = *r.relevant_ranks.iter().min().unwrap();
        let e = best.entry((r.query_id.as_str(), r.condition)).or_insert(u32::MAX);
        *e = (*e).min(rank);
    }
    f.manifest
        .query_ids()
        .iter()
        .map(|q| {
            let hit = |c| best.get(&(q.as_str(), c)).is_some_and(|&r| r <= k);
            let (t, i, m) = (hit(Condition::Text), hit(Condition::Image), hit(Condition::Multimodal));
            if t && i {
                Category::ShortcutBoth
            } else if t {
                Category::ShortcutText
            } else if i {
                Category::ShortcutImage
            } else if m {
                Category::CompositionRequired
            } else {
                Category::Unresolved
            }
        })
        .collect()
}

fn random_spec(rng: &mut ChaCha8Rng, min_gallery: u32) -> FixtureSpec {
    let c = counts(
        rng.gen_range(0..12),
        rng.gen_range(0..12),
        rng.gen_range(0..12),
        rng.gen_range(0..12),
        rng.gen_range(1..12),
    );
    let gallery = rng.gen_range(min_gallery..=200);
    let k = rng.gen_range(1..=20.min(gallery - 1));
    let mut spec = FixtureSpec::new(c, rng.gen_range(1..=6), gallery, k, rng.gen());
    spec.relevant_per_query = rng.gen_range(1..=3);
    spec
}

fn criterion_3() -> Check {
    let spec = FixtureSpec::new(counts(871, 2244, 370, 271, 414), 11, 2315, 10, 1);
    let f = generate_fixture(&spec).map_err(|e| e.to_string())?;
    let report = audit_dataset(&f.matrix(), &AuditConfig::new(10), &all_pool(&f)).map_err(|e| e.to_string())?;
    let pct = |n: usize| format!("{:.1}", report.percent(n));
    let got = (
        pct(report.counts.shortcut()),
        pct(report.counts.composition_required),
        pct(report.counts.unresolved),
    );
    ensure!(
        got == ("83.6".into(), "6.5".into(), "9.9".into()),
        "CIRR-shaped fixture prints {got:?}"
    );
    ensure!(report.total() == 4170, "total {}", report.total());

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    let mut queries = 0;
    for _ in 0..100 {
        let spec = random_spec(&mut rng, 25);
        let f = generate_fixture(&spec).map_err(|e| e.to_string())?;
        // a random nonempty sub-pool as well as the planted one
        let ids = f.manifest.retriever_ids().to_vec();
        let mut sub: Vec<&String> = ids.iter().filter(|_| rng.gen_bool(0.6)).collect();
        if sub.is_empty() {
            sub.push(&ids[0]);
        }
        for pool_ids in [ids.iter().collect::<Vec<_>>(), sub] {
            let pool = Pool::from_ids(&f.manifest, &pool_ids).map_err(|e| e.to_string())?;
            let set: BTreeSet<&str> = pool_ids.iter().map(|s| s.as_str()).collect();
            let report =
                audit_dataset(&f.matrix(), &AuditConfig::new(spec.cutoff), &pool).map_err(|e| e.to_string())?;
            let oracle = oracle_labels(&f, &set, spec.cutoff);
            queries += oracle.len();
            mismatches += report.labels.iter().zip(&oracle).filter(|(l, o)| l.label.category != **o).count();
        }
        let planted: Vec<Category> = f.planted.iter().map(|(_, c)| *c).collect();
        let all: BTreeSet<&str> = f.manifest.retriever_ids().iter().map(|s| s.as_str()).collect();
        mismatches += planted.iter().zip(oracle_labels(&f, &all, spec.cutoff)).filter(|(p, o)| **p != *o).count();
    }
    ensure!(mismatches == 0, "{mismatches} label mismatches");
    Ok(format!(
        "{}/{}/{} on 4,170 queries; 0 mismatches over {queries} labels in 100 fixtures",
        got.0, got.1, got.2
    ))
}

// ---------------------------------------------------------------------------
// 4: robustness to cutoff and pool

fn criterion_4() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..50 {
        let mut spec = random_spec(&mut rng, 40);
        spec.pool_size = rng.gen_range(2..=6);
        let f = generate_fixture(&spec).map_err(|e| e.to_string())?;
        let m = f.matrix();
        let pool = all_pool(&f);
        let sweep = cutoff_sweep(&m, &[5, 10, 20], &pool).map_err(|e| e.to_string())?;
        ensure!(
            sweep.windows(2).all(|w| w[0].rate <= w[1].rate),
            "trial {trial}: sweep not monotone"
        );
        let loo = loo_analysis(&m, &AuditConfig::new(spec.cutoff), &pool).map_err(|e| e.to_string())?;
        ensure!(
            loo.entries.iter().all(|e| e.rate <= loo.full_rate),
            "trial {trial}: a leave-one-out rate exceeds the full pool"
        );
    }

    let f = generate_fixture(&FixtureSpec::new(counts(10, 20, 10, 15, 15), 8, 120, 10, 44)).unwrap();
    let m = f.matrix();
    let cfg = AuditConfig::new(10);
    for trial in 0..100 {
        let mut outer: Vec<usize> = (0..8).filter(|_| rng.gen_bool(0.7)).collect();
        if outer.is_empty() {
            outer.push(rng.gen_range(0..8));
        }
        let mut inner: Vec<usize> = outer.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
        if inner.is_empty() {
            inner.push(*outer.choose(&mut rng).unwrap());
        }
        let big = audit_dataset(&m, &cfg, &Pool::from_indices(outer).unwrap()).unwrap();
        let small = audit_dataset(&m, &cfg, &Pool::from_indices(inner).unwrap()).unwrap();
        ensure!(
            small.counts.shortcut() <= big.counts.shortcut(),
            "trial {trial}: sub-pool has more shortcuts"
        );
    }

    // best unimodal rank per band: <=5, (5,10], (10,20], >20
    let both_beyond = RankBand::beyond(20);
    let mut plans = Vec::new();
    for (n, band) in [
        (3144, RankBand::within(5)),
        (341, RankBand::new(6, Some(10))),
        (255, RankBand::new(11, Some(20))),
        (430, both_beyond),
    ] {
        plans.extend(std::iter::repeat(QueryPlan {
            mm: RankBand::any(),
            text: band,
            image: both_beyond,
        }).take(n));
    }
    plans.shuffle(&mut rng);
    let f = generate_from_plans(&plans, 11, 2315, 1, 5).map_err(|e| e.to_string())?;
    let sweep = cutoff_sweep(&f.matrix(), &[5, 10, 20], &all_pool(&f)).map_err(|e| e.to_string())?;
    let got: Vec<String> = sweep.iter().map(|p| format!("{:.1}", 100.0 * p.rate)).collect();
    ensure!(got == ["75.4", "83.6", "89.7"], "sweep prints {got:?}");
    Ok(format!("50 sweeps and LOO runs, 100 nested pools; sweep {}", got.join("/")))
}

// ---------------------------------------------------------------------------
// 5: metric oracles

/// Brute force over an explicit binary gain vector.
fn brute(kind: MetricKind, gallery: u32, ranks: &[u32]) -> f64 {
    let gains: Vec<f64> = (1..=gallery).map(|p| if ranks.contains(&p) { 1.0 } else { 0.0 }).collect();
    let limit = |c: Cutoff| match c {
        Cutoff::At(k) => (k as usize).min(gains.len()),
        Cutoff::Full => gains.len(),
    };
    match kind {
        MetricKind::Recall(k) => {
            if gains[..(k as usize).min(gains.len())].iter().any(|&g| g > 0.0) {
                1.0
            } else {
                0.0
            }
        }
        MetricKind::Mrr(c) => gains[..limit(c)]
            .iter()
            .position(|&g| g > 0.0)
            .map_or(0.0, |i| 1.0 / (i + 1) as f64),
        MetricKind::Ndcg(c) => {
            let dcg = |g: &[f64]| -> f64 {
                g[..limit(c)]
                    .iter()
                    .enumerate()
                    .map(|(i, x)| x / ((i + 2) as f64).log2())
                    .sum()
            };
            let mut ideal = gains.clone();
            ideal.sort_by(|a, b| b.total_cmp(a));
            dcg(&gains) / dcg(&ideal)
        }
    }
}

fn criterion_5() -> Check {
    let one = metric(MetricKind::Ndcg(Cutoff::Full), &[1], 1).unwrap();
    let three = metric(MetricKind::Ndcg(Cutoff::Full), &[3], 1).unwrap();
    ensure!(one == 1.0 && close(three, 0.5, 1e-15), "anchors: {one}, {three}");

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let gallery = rng.gen_range(1..=50u32);
        let m = rng.gen_range(1..=5.min(gallery as usize));
        let mut ranks: Vec<u32> = rand::seq::index::sample(&mut rng, gallery as usize, m)
            .into_iter()
            .map(|p| p as u32 + 1)
            .collect();
        ranks.sort_unstable();
        let k = rng.gen_range(1..=gallery);
        for kind in [
            MetricKind::Recall(k),
            MetricKind::Mrr(Cutoff::Full),
            MetricKind::Mrr(Cutoff::At(k)),
            MetricKind::Ndcg(Cutoff::Full),
            MetricKind::Ndcg(Cutoff::At(10)),
            MetricKind::Ndcg(Cutoff::At(k)),
        ] {
            let got = metric(kind, &ranks, m).map_err(|e| e.to_string())?;
            let want = brute(kind, gallery, &ranks);
            worst = worst.max((got - want).abs());
            ensure!(close(got, want, 1e-12), "instance {i} {kind} {ranks:?}: {got} vs {want}");
        }
    }

    let mut checked = 0;
    for seed in 0..5 {
        let mut spec = FixtureSpec::new(counts(5, 5, 5, 20, 20), 4, 80, 10, seed);
        spec.relevant_per_query = 1 + seed as usize % 3;
        let f = generate_fixture(&spec).map_err(|e| e.to_string())?;
        let m = f.matrix();
        let report = audit_dataset(&m, &AuditConfig::new(10), &all_pool(&f)).unwrap();
        let sf = QuerySplit::new("sf", report.shortcut_free_ids());
        for r in f.manifest.retriever_ids() {
            let s = condition_scores(&m, &sf, r, MetricKind::Ndcg(Cutoff::At(10))).map_err(|e| e.to_string())?;
            ensure!(s.text == 0.0 && s.image == 0.0, "{r}: unimodal nDCG@10 {} {}", s.text, s.image);
            ensure!(s.delta_mm_i() == s.mm && s.delta_mm_t() == s.mm, "{r}: deltas differ from MM");
            checked += 1;
        }
    }
    Ok(format!(
        "6,000 metric values, max |error| {worst:.1e}; SF pattern holds for {checked} retriever splits"
    ))
}

// ---------------------------------------------------------------------------
// 6: bootstrap

fn criterion_6() -> Check {
    let cfg = BootstrapConfig::new(2000, 11);
    let flat = bootstrap_mean_ci(&[0.37; 64], &cfg).map_err(|e| e.to_string())?;
    ensure!(
        flat.lower == 0.37 && flat.upper == 0.37 && flat.estimate == 0.37,
        "constant data: {flat:?}"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let data: Vec<f64> = (0..300).map(|_| rng.gen::<f64>()).collect();
    let a = serde_json::to_string(&bootstrap_mean_ci(&data, &cfg).unwrap()).unwrap();
    let b = serde_json::to_string(&bootstrap_mean_ci(&data, &cfg).unwrap()).unwrap();
    let c = serde_json::to_string(&bootstrap_mean_ci(&data, &BootstrapConfig::new(2000, 12)).unwrap()).unwrap();
    ensure!(a == b, "same seed, different bytes");
    ensure!(a != c, "seed has no effect");

    let p = 0.3;
    let n = 200;
    let datasets = 500;
    let mut covered = 0;
    for d in 0..datasets {
        let sample: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.gen_bool(p)))).collect();
        let ci = bootstrap_mean_ci(&sample, &BootstrapConfig::new(2000, d)).unwrap();
        covered += usize::from(ci.contains(p));
    }
    let coverage = covered as f64 / datasets as f64;
    ensure!((0.92..=0.98).contains(&coverage), "coverage {coverage}");

    let shift = 0.125;
    let pairs: Vec<Vec<(f64, f64)>> = (0..150)
        .map(|_| {
            (0..5)
                .map(|_| {
                    let x = f64::from(rng.gen_range(0..64u8)) / 64.0;
                    (x + shift, x)
                })
                .collect()
        })
        .collect();
    let d = paired_delta_ci(&pairs, &cfg).unwrap();
    ensure!(d.estimate == shift && d.lower == shift && d.upper == shift, "paired delta {d:?}");
    Ok(format!("coverage {coverage:.3} over {datasets} datasets (B=2000, n={n}); shift {shift} exact"))
}

// ---------------------------------------------------------------------------
// 7: agreement

fn criterion_7() -> Check {
    let perfect: Vec<Vec<char>> = (0..20).map(|i| vec![if i % 3 == 0 { 'I' } else { 'V' }; 4]).collect();
    let m = LabelMatrix::complete(perfect.clone()).map_err(|e| e.to_string())?;
    let f = fleiss_kappa(&m).unwrap();
    let a = krippendorff_alpha_nominal(&m).unwrap();
    let col = |j: usize| perfect.iter().map(|r| r[j]).collect::<Vec<_>>();
    let c = cohen_kappa(&col(0), &col(1)).unwrap();
    ensure!(f == Some(1.0) && a == Some(1.0) && c == Some(1.0), "perfect: {f:?} {a:?} {c:?}");

    let worked = LabelMatrix::complete(vec![vec!['V', 'V', 'I'], vec!['V', 'I', 'I']]).unwrap();
    let k = fleiss_kappa(&worked).unwrap().ok_or("undefined")?;
    ensure!(close(k, -1.0 / 3.0, 1e-12), "worked case {k}");

    // balanced latent truth, 9 raters who each agree with it 80% of the time
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rows: Vec<Vec<bool>> = (0..1000)
        .map(|i| {
            let truth = i % 2 == 0;
            (0..9).map(|_| if rng.gen_bool(0.8) { truth } else { !truth }).collect()
        })
        .collect();
    let big = LabelMatrix::complete(rows).unwrap();
    let fk = fleiss_kappa(&big).unwrap().unwrap();
    let ka = krippendorff_alpha_nominal(&big).unwrap().unwrap();
    ensure!((fk - ka).abs() < 0.01, "|alpha - kappa| = {}", (fk - ka).abs());

    let relabelled = big.map(|&b| if b { "no" } else { "yes" });
    let fk2 = fleiss_kappa(&relabelled).unwrap().unwrap();
    let ka2 = krippendorff_alpha_nominal(&relabelled).unwrap().unwrap();
    let x: Vec<bool> = big.column(0).into_iter().flatten().collect();
    let y: Vec<bool> = big.column(1).into_iter().flatten().collect();
    let x2: Vec<u8> = x.iter().map(|&b| if b { 7 } else { 3 }).collect();
    let y2: Vec<u8> = y.iter().map(|&b| if b { 7 } else { 3 }).collect();
    let ck = cohen_kappa(&x, &y).unwrap().unwrap();
    let ck2 = cohen_kappa(&x2, &y2).unwrap().unwrap();
    ensure!(
        close(fk, fk2, 1e-12) && close(ka, ka2, 1e-12) && close(ck, ck2, 1e-12),
        "relabelling changed a coefficient"
    );
    Ok(format!("kappa {fk:.4}, alpha {ka:.4} on 1,000 x 9; worked case -1/3"))
}

// ---------------------------------------------------------------------------
// 8: validation pipeline

fn random_record(rng: &mut ChaCha8Rng, q: &str, a: &str, t: u64) -> AnnotationRecord {
    let issues: Vec<IssueLabel> = if rng.gen_bool(0.5) {
        Vec::new()
    } else {
        IssueLabel::ALL.iter().copied().filter(|_| rng.gen_bool(0.4)).collect()
    };
    AnnotationRecord::from_issues(q, a, t, issues)
}

/// Majority from scratch: later entries replace earlier ones unless older.
fn oracle_majority(records: &[AnnotationRecord], threshold: f64) -> BTreeMap<String, bool> {
    let mut cur: BTreeMap<(String, String), (u64, bool)> = BTreeMap::new();
    for r in records {
        let key = (r.query_id.clone(), r.annotator_id.clone());
        if cur.get(&key).is_none_or(|&(t, _)| r.timestamp >= t) {
            cur.insert(key, (r.timestamp, r.valid));
        }
    }
    let mut votes: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for ((q, _), (_, v)) in cur {
        let e = votes.entry(q).or_default();
        e.0 += usize::from(v);
        e.1 += 1;
    }
    votes
        .into_iter()
        .map(|(q, (yes, n))| (q, yes as f64 / n as f64 > threshold))
        .collect()
}

fn round_trip() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("judgments.jsonl");
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let mut written = Vec::new();
    {
        let mut log = JudgmentLog::open(&path).map_err(|e| e.to_string())?;
        for _ in 0..600 {
            let q = format!("q{}", rng.gen_range(0..80));
            let a = format!("a{}", rng.gen_range(0..5));
            let t = rng.gen_range(0..40);
            let r = random_record(&mut rng, &q, &a, t);
            log.append(r.clone()).map_err(|e| e.to_string())?;
            written.push(r);
        }
    }
    let reopened = JudgmentLog::open(&path).map_err(|e| e.to_string())?;
    ensure!(reopened.history() == written.as_slice(), "history differs after reopen");
    let replayed = replay(std::io::BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
    ensure!(replayed == written, "replay differs");
    let policy = AggregationPolicy::Majority {
        threshold: 0.5,
        quorum: 1,
    };
    let got = aggregate_labels(reopened.history(), &policy).map_err(|e| e.to_string())?;
    let want = oracle_majority(&written, 0.5);
    let got_valid: BTreeMap<String, bool> = got.iter().map(|(q, l)| (q.clone(), l.valid)).collect();
    ensure!(got_valid == want, "aggregate differs from the oracle");
    ensure!(
        got.values().all(|l| l.valid == l.issues.is_empty()),
        "aggregate validity and issues disagree"
    );
    Ok(format!("{} judgments, {} queries", written.len(), got.len()))
}

fn export_inclusions() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(82);
    for run in 0..100 {
        let spec = random_spec(&mut rng, 25);
        let f = generate_fixture(&spec).map_err(|e| e.to_string())?;
        let report = audit_dataset(&f.matrix(), &AuditConfig::new(spec.cutoff), &all_pool(&f)).unwrap();
        // judge a random subset of all queries, shortcut ones included
        let mut records = Vec::new();
        for q in f.manifest.query_ids() {
            if rng.gen_bool(0.7) {
                records.push(random_record(&mut rng, q, "a", 1));
            }
        }
        let labels = aggregate_labels(&records, &AggregationPolicy::default()).map_err(|e| e.to_string())?;
        let agg = Aggregated {
            labels: &labels,
            policy: "single_assignee",
            batches: &[],
        };
        let [full, sf, v] = export_splits(&report, agg).map_err(|e| format!("run {run}: {e}"))?;
        let set = |ids: &[String]| ids.iter().cloned().collect::<BTreeSet<_>>();
        let (full, sf, v) = (set(&full.query_ids), set(&sf.query_ids), set(&v.query_ids));
        ensure!(v.is_subset(&sf) && sf.is_subset(&full), "run {run}: inclusion broken");
        let expect: BTreeSet<String> = f
            .planted
            .iter()
            .filter(|(q, c)| c.is_shortcut_free() && labels.get(q).is_some_and(|l| l.valid))
            .map(|(q, _)| q.clone())
            .collect();
        ensure!(v == expect, "run {run}: V differs from the oracle");
    }
    Ok("100 runs".into())
}

struct Scope {
    dataset: &'static str,
    comp: (usize, usize),
    unres: (usize, usize),
    /// SF size per bucket when the audit scope is a stratified sample.
    population: Option<(usize, usize)>,
}

const TABLE: [Scope; 4] = [
    Scope { dataset: "cirr", comp: (271, 147), unres: (414, 156), population: None },
    Scope { dataset: "fashioniq", comp: (1000, 368), unres: (1000, 218), population: Some((1400, 1700)) },
    Scope { dataset: "lasco", comp: (1000, 452), unres: (1000, 306), population: Some((1250, 2100)) },
    Scope { dataset: "circo", comp: (53, 39), unres: (3, 3), population: None },
];

/// Issue sets for CIRR's 124 invalid composition-required items: 94 overly
/// broad, 4 overly broad with invalid text, 8 invalid text, 7 invalid
/// reference, 11 invalid target.
fn cirr_comp_issues() -> Vec<Vec<IssueLabel>> {
    use IssueLabel::*;
    let mut v = Vec::new();
    v.extend(std::iter::repeat(vec![OverlyBroadQuery]).take(94));
    v.extend(std::iter::repeat(vec![OverlyBroadQuery, InvalidText]).take(4));
    v.extend(std::iter::repeat(vec![InvalidText]).take(8));
    v.extend(std::iter::repeat(vec![InvalidReferenceImage]).take(7));
    v.extend(std::iter::repeat(vec![InvalidTargetImage]).take(11));
    v
}

fn scope_fixture(s: &Scope, seed: u64) -> Result<(Fixture, AuditReport, BTreeMap<Category, Vec<String>>), String> {
    let (nc, nu) = s.population.unwrap_or((s.comp.0, s.unres.0));
    let mut spec = FixtureSpec::new(counts(20, 40, 20, nc, nu), 2, 60, 10, seed);
    spec.topk_depth = Some(10);
    let f = generate_fixture(&spec).map_err(|e| e.to_string())?;
    let report = audit_dataset(&f.matrix(), &AuditConfig::new(10), &all_pool(&f)).map_err(|e| e.to_string())?;
    let labelled: Vec<(String, Category)> = report.labels.iter().map(|l| (l.query.clone(), l.label.category)).collect();
    let requests = BTreeMap::from([
        (Category::CompositionRequired, s.comp.0),
        (Category::Unresolved, s.unres.0),
    ]);
    let sample = stratified_sample(&labelled, &requests, seed);
    if !sample.shortfall.is_empty() {
        return Err(format!("{}: shortfall {:?}", s.dataset, sample.shortfall));
    }
    Ok((f, report, sample.strata))
}

/// Judgments for one scope: the first `valid` items of each bucket pass.
fn scope_judgments(s: &Scope, scope: &BTreeMap<Category, Vec<String>>) -> Vec<(String, Vec<IssueLabel>)> {
    let mut out = Vec::new();
    for (bucket, (_, valid)) in [(Category::CompositionRequired, s.comp), (Category::Unresolved, s.unres)] {
        let ids = &scope[&bucket];
        let mut cirr = cirr_comp_issues().into_iter();
        for (i, q) in ids.iter().enumerate() {
            let issues = if i < valid {
                Vec::new()
            } else if s.dataset == "cirr" && bucket == Category::CompositionRequired {
                cirr.next().expect("124 invalid items")
            } else {
                vec![IssueLabel::InvalidText]
            };
            out.push((q.clone(), issues));
        }
    }
    out
}

fn table_totals() -> Check {
    let (mut comp, mut unres) = ((0, 0), (0, 0));
    let mut cirr_v = 0;
    let mut broad = String::new();
    for (i, s) in TABLE.iter().enumerate() {
        let (f, report, scope) = scope_fixture(s, 100 + i as u64)?;
        let judgments = scope_judgments(s, &scope);
        let labels: BTreeMap<String, FinalLabel> = if s.dataset == "cirr" {
            // CIRR goes through the service: serve, judge, aggregate, export
            let ids: Vec<String> = judgments.iter().map(|(q, _)| q.clone()).collect();
            let plan = BatchPlan::round_robin(&ids, &["ann".to_string()], 50).map_err(|e| e.to_string())?;
            let service = ValidationService::new(f.matrix(), report.clone(), plan, JudgmentLog::in_memory())
                .map_err(|e| e.to_string())?;
            service.register("ann").map_err(|e| e.to_string())?;
            let issues: HashMap<String, Vec<IssueLabel>> = judgments.into_iter().collect();
            let mut t = 0;
            while let Some(task) = service.next_task("ann").map_err(|e| e.to_string())? {
                t += 1;
                let rec = AnnotationRecord::from_issues(&task.query_id, "ann", t, issues[&task.query_id].clone());
                service.submit(rec).map_err(|e| e.to_string())?;
            }
            ensure!(t == 685, "served {t} tasks");
            let v = service.export(SplitId::V).map_err(|e| e.to_string())?;
            cirr_v = v.query_ids.len();
            let rep = service.report().map_err(|e| e.to_string())?;
            let b = rep.issues.bucket(Category::CompositionRequired).ok_or("no comp bucket")?;
            let ob = b.issues.iter().find(|c| c.issue == IssueLabel::OverlyBroadQuery).unwrap();
            broad = format!("{} ({:.1})", ob.count, ob.percent);
            ensure!(b.invalid == 124, "cirr comp invalid {}", b.invalid);
            service.aggregate().map_err(|e| e.to_string())?
        } else {
            let records: Vec<AnnotationRecord> = judgments
                .into_iter()
                .map(|(q, issues)| AnnotationRecord::from_issues(q, "ann", 1, issues))
                .collect();
            aggregate_labels(&records, &AggregationPolicy::default()).map_err(|e| e.to_string())?
        };
        let cats = report.label_map();
        let summary = validity_summary(&labels, &cats).map_err(|e| e.to_string())?;
        let dist = issue_distribution(s.dataset, &labels, &cats).map_err(|e| e.to_string())?;
        for b in &summary.buckets {
            let target = match b.bucket {
                Category::CompositionRequired => &mut comp,
                Category::Unresolved => &mut unres,
                other => return Err(format!("{other} audited")),
            };
            target.0 += b.audited;
            target.1 += b.valid;
        }
        ensure!(
            dist.buckets.iter().map(|b| b.invalid).sum::<usize>() == summary.audited - summary.valid,
            "{}: invalid counts disagree",
            s.dataset
        );
        if s.dataset == "cirr" {
            let v = export_split(
                &report,
                Some(Aggregated {
                    labels: &labels,
                    policy: "single_assignee",
                    batches: &[],
                }),
                SplitId::V,
            )
            .map_err(|e| e.to_string())?;
            ensure!(v.query_ids.len() == cirr_v, "service and direct export disagree");
        }
    }
    let pc = format!("{:.1}", 100.0 * comp.1 as f64 / comp.0 as f64);
    let pu = format!("{:.1}", 100.0 * unres.1 as f64 / unres.0 as f64);
    ensure!(comp == (2324, 1006) && unres == (2417, 683), "totals {comp:?} {unres:?}");
    ensure!(pc == "43.3" && pu == "28.3", "valid rates {pc} / {pu}");
    ensure!(cirr_v == 303, "|V| = {cirr_v}");
    ensure!(broad == "98 (79.0)", "overly broad {broad}");
    Ok(format!("{pc}% / {pu}% valid, CIRR |V| = {cirr_v}, overly broad {broad}"))
}

fn criterion_8() -> Check {
    let a = round_trip()?;
    let b = export_inclusions()?;
    let c = table_totals()?;
    Ok(format!("round trip {a}; inclusions {b}; {c}"))
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Check, Duration); 8] = [
        (1, "composition gap (nDCG)", criterion_1, Duration::from_secs(1)),
        (2, "composition gap (MRR)", criterion_2, Duration::from_secs(1)),
        (3, "audit counting", criterion_3, Duration::from_secs(5)),
        (4, "robustness properties", criterion_4, Duration::from_secs(10)),
        (5, "metric oracles", criterion_5, Duration::from_secs(10)),
        (6, "bootstrap", criterion_6, Duration::from_secs(60)),
        (7, "agreement", criterion_7, Duration::from_secs(10)),
        (8, "validation pipeline", criterion_8, Duration::from_secs(5)),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, name, check, budget) in criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(d) if elapsed > budget => Err(format!("{d}; over the {budget:?} budget")),
            other => other,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(e) => {
                failed += 1;
                ("FAIL", e)
            }
        };
        println!("criterion {n} [{tag}] {name} ({:.2}s): {detail}", elapsed.as_secs_f64());
    }
    println!("acceptance: {} of 8 passed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
