use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufReader, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::Arc;

use cir_audit::audit::{
    audit_dataset, cutoff_sweep, loo_analysis, read_labels_jsonl, single_retriever_rates, AuditConfig, AuditReport,
    Category, CategoryCounts, Pool,
};
use cir_audit::metrics::{avg_comp_gap_over_pool, split_report, MetricKind, QuerySplit, ReferenceTable};
use cir_audit::rank_store::{generate_fixture, FixtureSpec, RunMatrix};
use cir_audit::stats::{agreement_report, stratified_sample, uncertainty_report, BootstrapConfig, LabelMatrix};
use cir_audit::validation::{
    aggregate_labels, export_split, latest, replay, serve_connection, serve_tcp, Aggregated, AggregationPolicy,
    AnnotationRecord, BatchPlan, IssueLabel, JudgmentLog, SplitId, SplitManifest, ValidationService,
};
use serde_json::{json, Value};

use crate::io::{provenance, Inputs, OutDir};
use crate::{Cli, CliError, Command, DataArgs, SplitArgs};

type Res<T = ()> = Result<T, CliError>;

pub fn run(cli: Cli) -> Res {
    let out = cli.out;
    match cli.command {
        Command::Audit { data, k } => audit(out, data, k),
        Command::Sweep { data, cutoffs, k } => sweep(out, data, cutoffs, k),
        Command::Metrics { data, splits, metric } => metrics(out, data, splits, &metric),
        Command::Compgap {
            manifest,
            runs,
            pool,
            policy,
            splits,
            table,
            metric,
        } => match manifest {
            Some(manifest) => {
                let data = DataArgs {
                    manifest,
                    runs,
                    pool,
                    policy,
                };
                compgap_runs(out, data, splits, &metric)
            }
            None => compgap_table(out, table, &metric),
        },
        Command::Uncertainty {
            data,
            splits,
            metric,
            resamples,
            confidence,
            seed,
        } => {
            let config = BootstrapConfig {
                resamples: resamples as usize,
                confidence,
                master_seed: seed,
            };
            uncertainty(out, data, splits, &metric, config)
        }
        Command::Agreement { judgments } => agreement(out, judgments),
        Command::Sample { labels, requests, seed } => sample(out, labels, &requests, seed),
        Command::Export {
            data,
            k,
            judgments,
            aggregation,
            split,
        } => export(out, data, k, judgments, &aggregation, &split),
        Command::Fixture {
            seed,
            counts,
            preset,
            retrievers,
            gallery,
            k,
            relevant,
        } => fixture(out, seed, &counts, &preset, retrievers, gallery, k, relevant),
        Command::Serve {
            data,
            k,
            log,
            assets,
            annotators,
            batch_size,
            overlap,
            aggregation,
            listen,
            stdio,
        } => serve(
            data,
            k,
            log,
            assets,
            annotators,
            batch_size,
            overlap,
            &aggregation,
            listen,
            stdio,
        ),
    }
}

fn data_config(data: &DataArgs) -> Value {
    json!({
        "manifest": data.manifest.display().to_string(),
        "runs": data.runs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "pool": data.pool,
        "policy": data.policy,
    })
}

fn merge(mut a: Value, b: Value) -> Value {
    if let (Value::Object(a), Value::Object(b)) = (&mut a, b) {
        a.extend(b);
    }
    a
}

fn pool_of(matrix: &RunMatrix, ids: &[String]) -> Res<Pool> {
    Ok(if ids.is_empty() {
        Pool::all(matrix.manifest())?
    } else {
        Pool::from_ids(matrix.manifest(), ids)?
    })
}

fn load(data: &DataArgs, inputs: &mut Inputs) -> Res<(RunMatrix, Pool)> {
    let matrix = inputs.matrix(&data.manifest, &data.runs, data.policy)?;
    let pool = pool_of(&matrix, &data.pool)?;
    Ok((matrix, pool))
}

fn parse_metric(s: &str) -> Res<MetricKind> {
    Ok(s.parse::<MetricKind>()?)
}

fn parse_pairs(items: &[String]) -> Res<Vec<(Category, usize)>> {
    items
        .iter()
        .map(|item| {
            let (name, count) = item
                .split_once('=')
                .ok_or_else(|| CliError::Data(format!("expected category=count, got `{item}`")))?;
            let category = name.trim().parse::<Category>().map_err(CliError::Data)?;
            let count = count
                .trim()
                .parse::<usize>()
                .map_err(|_| CliError::Data(format!("bad count in `{item}`")))?;
            Ok((category, count))
        })
        .collect()
}

fn parse_aggregation(s: &str) -> Res<Option<AggregationPolicy>> {
    if s == "single" {
        return Ok(None);
    }
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        ["majority", t, q] => {
            let threshold = t
                .parse::<f64>()
                .map_err(|_| CliError::Data(format!("bad majority threshold `{t}`")))?;
            let quorum = q
                .parse::<usize>()
                .map_err(|_| CliError::Data(format!("bad majority quorum `{q}`")))?;
            Ok(Some(AggregationPolicy::Majority { threshold, quorum }))
        }
        _ => Err(CliError::Data(format!(
            "unknown aggregation `{s}` (use single or majority:THRESHOLD:QUORUM)"
        ))),
    }
}

fn read_judgments(paths: &[PathBuf], inputs: &mut Inputs) -> Res<Vec<AnnotationRecord>> {
    let mut all = Vec::new();
    for p in paths {
        let bytes = inputs.read(p)?;
        all.extend(replay(BufReader::new(bytes.as_slice())).map_err(|e| CliError::at(p, e))?);
    }
    Ok(all)
}

fn run_audit(matrix: &RunMatrix, pool: &Pool, k: u32) -> Res<AuditReport> {
    Ok(audit_dataset(matrix, &AuditConfig::new(k), pool)?)
}

fn build_splits(matrix: &RunMatrix, pool: &Pool, args: &SplitArgs, inputs: &mut Inputs) -> Res<Vec<QuerySplit>> {
    let mut audit: Option<AuditReport> = None;
    let mut out = Vec::new();
    for s in &args.splits {
        let split = s.parse::<SplitId>()?;
        out.push(match split {
            SplitId::Full => QuerySplit::full(matrix),
            SplitId::Sf => {
                if audit.is_none() {
                    audit = Some(run_audit(matrix, pool, args.k)?);
                }
                QuerySplit::new("sf", audit.as_ref().expect("audit just ran").shortcut_free_ids())
            }
            SplitId::V => {
                let path = args
                    .v_manifest
                    .as_ref()
                    .ok_or_else(|| CliError::Data("split v needs --v-manifest".into()))?;
                let bytes = inputs.read(path)?;
                let m: SplitManifest = serde_json::from_slice(&bytes)
                    .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                QuerySplit::new("v", m.query_ids)
            }
        });
    }
    if out.is_empty() {
        return Err(CliError::Data("no splits requested".into()));
    }
    Ok(out)
}

fn split_config(args: &SplitArgs) -> Value {
    json!({
        "splits": args.splits,
        "k": args.k,
        "v_manifest": args.v_manifest.as_ref().map(|p| p.display().to_string()),
    })
}

fn finish(out: &OutDir) {
    for p in out.written() {
        eprintln!("wrote {}", p.display());
    }
}

fn audit(dir: PathBuf, data: DataArgs, k: u32) -> Res {
    let mut inputs = Inputs::default();
    let (matrix, pool) = load(&data, &mut inputs)?;
    let report = run_audit(&matrix, &pool, k)?;
    let config = merge(data_config(&data), json!({ "k": k }));
    let mut out = OutDir::new(dir, provenance("audit", config, &inputs))?;
    out.json(
        "audit.json",
        merge(serde_json::to_value(report.summary()).expect("summary"), json!({ "run_id": report.run_id() })),
    )?;
    out.jsonl("labels.jsonl", &report.labels_jsonl())?;
    out.text("audit.txt", &report.table_text())?;
    print!("{}", report.table_text());
    println!("run id: {}", report.run_id());
    finish(&out);
    Ok(())
}

fn sweep(dir: PathBuf, data: DataArgs, cutoffs: Vec<u32>, k: u32) -> Res {
    let mut inputs = Inputs::default();
    let (matrix, pool) = load(&data, &mut inputs)?;
    let points = cutoff_sweep(&matrix, &cutoffs, &pool)?;
    let config = AuditConfig::new(k);
    let loo = if pool.len() >= 2 {
        Some(loo_analysis(&matrix, &config, &pool)?)
    } else {
        None
    };
    let single = single_retriever_rates(&matrix, &config, &pool)?;
    let cfg = merge(data_config(&data), json!({ "cutoffs": cutoffs, "k": k }));
    let mut out = OutDir::new(dir, provenance("sweep", cfg, &inputs))?;
    out.json("sweep.json", json!({ "sweep": points, "loo": loo, "single_retriever": single }))?;
    println!("{:>6} {:>9} {:>7}", "K", "shortcut", "%");
    for p in &points {
        println!("{:>6} {:>9} {:>7.1}", p.cutoff, p.shortcut_count, 100.0 * p.rate);
    }
    if let Some(l) = &loo {
        println!(
            "leave-one-out at K={}: full pool {:.1}%, range [{:.1}, {:.1}]%",
            l.cutoff,
            100.0 * l.full_rate,
            100.0 * l.min_rate,
            100.0 * l.max_rate
        );
    }
    finish(&out);
    Ok(())
}

fn metrics(dir: PathBuf, data: DataArgs, args: SplitArgs, metric: &str) -> Res {
    let kind = parse_metric(metric)?;
    let mut inputs = Inputs::default();
    let (matrix, pool) = load(&data, &mut inputs)?;
    let splits = build_splits(&matrix, &pool, &args, &mut inputs)?;
    let report = split_report(&matrix, &splits, kind, &pool)?;
    let cfg = merge(merge(data_config(&data), split_config(&args)), json!({ "metric": kind }));
    let mut out = OutDir::new(dir, provenance("metrics", cfg, &inputs))?;
    out.json("metrics.json", &report)?;
    out.text("metrics.txt", &report.to_text())?;
    print!("{}", report.to_text());
    finish(&out);
    Ok(())
}

fn compgap_runs(dir: PathBuf, data: DataArgs, args: SplitArgs, metric: &str) -> Res {
    let kind = parse_metric(metric)?;
    let mut inputs = Inputs::default();
    let (matrix, pool) = load(&data, &mut inputs)?;
    let splits = build_splits(&matrix, &pool, &args, &mut inputs)?;
    let mut rows = Vec::new();
    for s in &splits {
        let g = avg_comp_gap_over_pool(&matrix, s, kind, &pool)?;
        println!("{} {} {:.3} (undefined: {})", matrix.manifest().benchmark_id(), s.id, g.mean, g.undefined);
        rows.push(json!({ "dataset": matrix.manifest().benchmark_id(), "split": s.id, "gap": g }));
    }
    let cfg = merge(merge(data_config(&data), split_config(&args)), json!({ "metric": kind }));
    let mut out = OutDir::new(dir, provenance("compgap", cfg, &inputs))?;
    out.json("compgap.json", json!({ "metric": kind, "bars": rows }))?;
    finish(&out);
    Ok(())
}

fn compgap_table(dir: PathBuf, table: Option<PathBuf>, metric: &str) -> Res {
    let kind = parse_metric(metric)?;
    let mut inputs = Inputs::default();
    let t = match &table {
        Some(p) => {
            let bytes = inputs.read(p)?;
            ReferenceTable::parse(bytes.as_slice()).map_err(|e| CliError::at(p, e))?
        }
        None => ReferenceTable::bundled()?,
    };
    let bars = t.gap_bars(&kind.to_string())?;
    println!("{:<12} {:<5} {:>8}", "dataset", "split", "compgap");
    for b in &bars {
        println!("{:<12} {:<5} {:>8.3}", b.dataset, b.split, b.gap.mean);
    }
    let cfg = json!({
        "metric": kind,
        "table": table.as_ref().map_or("bundled".to_string(), |p| p.display().to_string()),
    });
    let mut out = OutDir::new(dir, provenance("compgap", cfg, &inputs))?;
    out.json("compgap.json", json!({ "metric": kind, "bars": bars }))?;
    finish(&out);
    Ok(())
}

fn uncertainty(dir: PathBuf, data: DataArgs, args: SplitArgs, metric: &str, config: BootstrapConfig) -> Res {
    let kind = parse_metric(metric)?;
    config.validate()?;
    let mut inputs = Inputs::default();
    let (matrix, pool) = load(&data, &mut inputs)?;
    let splits = build_splits(&matrix, &pool, &args, &mut inputs)?;
    let rows = uncertainty_report(&matrix, &splits, kind, &pool, &config)?;
    println!(
        "{:<12} {:<5} {:>6} {:<16} {:>8}  95% interval",
        "dataset", "split", "N", "quantity", "estimate"
    );
    for r in &rows {
        println!(
            "{:<12} {:<5} {:>6} {:<16} {:>8.1}  [{:.1}, {:.1}]",
            r.dataset,
            r.split,
            r.n,
            r.quantity,
            100.0 * r.estimate,
            100.0 * r.lower,
            100.0 * r.upper
        );
    }
    let cfg = merge(
        merge(data_config(&data), split_config(&args)),
        json!({ "metric": kind, "bootstrap": config }),
    );
    let mut out = OutDir::new(dir, provenance("uncertainty", cfg, &inputs))?;
    out.json("uncertainty.json", json!({ "rows": rows }))?;
    finish(&out);
    Ok(())
}

fn agreement(dir: PathBuf, paths: Vec<PathBuf>) -> Res {
    let mut inputs = Inputs::default();
    let records = read_judgments(&paths, &mut inputs)?;
    let current = latest(&records);
    let annotators: BTreeSet<&str> = current.keys().map(|(_, a)| a.as_str()).collect();
    let annotators: Vec<&str> = annotators.into_iter().collect();
    let mut per_query: BTreeMap<&str, BTreeMap<&str, &BTreeSet<IssueLabel>>> = BTreeMap::new();
    for ((q, a), r) in &current {
        per_query.entry(q.as_str()).or_default().insert(a.as_str(), &r.issues);
    }
    let rows: Vec<Vec<Option<BTreeSet<IssueLabel>>>> = per_query
        .values()
        .filter(|m| m.len() >= 2)
        .map(|m| annotators.iter().map(|a| m.get(a).map(|s| (*s).clone())).collect())
        .collect();
    let matrix = LabelMatrix::new(rows)?;
    let report = agreement_report(&matrix, |s: &BTreeSet<IssueLabel>| s.is_empty())?;
    let fmt = |x: Option<f64>| x.map_or("undefined".to_string(), |v| format!("{v:.3}"));
    println!("items: {}, raters: {}", report.items, report.raters);
    println!("Fleiss kappa:              {}", fmt(report.fleiss_kappa));
    println!("Krippendorff alpha:        {}", fmt(report.krippendorff_alpha));
    println!(
        "mean pairwise Cohen kappa: {} [{}, {}]",
        fmt(report.pairwise.mean_kappa),
        fmt(report.pairwise.min_kappa),
        fmt(report.pairwise.max_kappa)
    );
    println!("unanimous valid/invalid:   {:.1}%", 100.0 * report.pairwise.unanimous_rate);
    let cfg = json!({ "judgments": paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>() });
    let mut out = OutDir::new(dir, provenance("agreement", cfg, &inputs))?;
    out.json("agreement.json", json!({ "raters": annotators, "report": report }))?;
    finish(&out);
    Ok(())
}

fn sample(dir: PathBuf, labels: PathBuf, requests: &[String], seed: u64) -> Res {
    let mut inputs = Inputs::default();
    let bytes = inputs.read(&labels)?;
    let labelled = read_labels_jsonl(BufReader::new(bytes.as_slice())).map_err(|e| CliError::at(&labels, e))?;
    let pairs: Vec<(String, Category)> = labelled.into_iter().map(|l| (l.query, l.label.category)).collect();
    let requests: BTreeMap<Category, usize> = parse_pairs(requests)?.into_iter().collect();
    let s = stratified_sample(&pairs, &requests, seed);
    for (c, ids) in &s.strata {
        match s.shortfall.get(c) {
            Some(short) => println!("{c}: {} (shortfall {short})", ids.len()),
            None => println!("{c}: {}", ids.len()),
        }
    }
    let cfg = json!({ "labels": labels.display().to_string(), "requests": requests, "seed": seed });
    let mut out = OutDir::new(dir, provenance("sample", cfg, &inputs))?;
    out.json("sample.json", &s)?;
    finish(&out);
    Ok(())
}

fn export(dir: PathBuf, data: DataArgs, k: u32, judgments: Vec<PathBuf>, aggregation: &str, splits: &[String]) -> Res {
    let policy = parse_aggregation(aggregation)?.unwrap_or_default();
    let splits = splits.iter().map(|s| s.parse::<SplitId>()).collect::<Result<Vec<_>, _>>()?;
    let mut inputs = Inputs::default();
    let (matrix, pool) = load(&data, &mut inputs)?;
    let report = run_audit(&matrix, &pool, k)?;
    let records = read_judgments(&judgments, &mut inputs)?;
    let labels = if records.is_empty() {
        None
    } else {
        Some(aggregate_labels(&records, &policy)?)
    };
    let name = policy.name();
    let agg = labels.as_ref().map(|labels| Aggregated {
        labels,
        policy: &name,
        batches: &[],
    });
    let cfg = merge(
        data_config(&data),
        json!({
            "k": k,
            "judgments": judgments.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "aggregation": name,
        }),
    );
    let mut out = OutDir::new(dir, provenance("export", cfg, &inputs))?;
    let mut written: Vec<(SplitId, BTreeSet<String>)> = Vec::new();
    for s in splits {
        let m = export_split(&report, agg, s)?;
        println!("{}: {} queries", s, m.query_ids.len());
        written.push((s, m.query_ids.iter().cloned().collect()));
        out.json(&format!("split_{s}.json"), &m)?;
    }
    let get = |id: SplitId| written.iter().find(|(s, _)| *s == id).map(|(_, q)| q);
    if let (Some(v), Some(sf)) = (get(SplitId::V), get(SplitId::Sf)) {
        if !v.is_subset(sf) {
            return Err(CliError::Internal("V is not a subset of SF".into()));
        }
    }
    finish(&out);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn fixture(
    dir: PathBuf,
    seed: u64,
    counts: &[String],
    preset: &str,
    retrievers: usize,
    gallery: Option<u32>,
    k: u32,
    relevant: usize,
) -> Res {
    let (mut c, default_gallery) = match preset {
        "small" => (
            CategoryCounts {
                shortcut_both: 8,
                shortcut_text: 20,
                shortcut_image: 6,
                composition_required: 10,
                unresolved: 16,
            },
            500,
        ),
        "cirr" => (
            CategoryCounts {
                shortcut_both: 871,
                shortcut_text: 2244,
                shortcut_image: 370,
                composition_required: 271,
                unresolved: 414,
            },
            2315,
        ),
        other => return Err(CliError::Data(format!("unknown preset `{other}` (small or cirr)"))),
    };
    if !counts.is_empty() {
        c = CategoryCounts::default();
        for (cat, n) in parse_pairs(counts)? {
            *c.get_mut(cat) = n;
        }
    }
    let gallery = gallery.unwrap_or(default_gallery);
    let mut spec = FixtureSpec::new(c, retrievers, gallery, k, seed);
    spec.relevant_per_query = relevant;
    spec.topk_depth = Some(k);
    let f = generate_fixture(&spec)?;
    let cfg = json!({
        "seed": seed, "preset": preset, "counts": c, "retrievers": retrievers,
        "gallery": gallery, "k": k, "relevant": relevant,
    });
    let inputs = Inputs::default();
    let mut out = OutDir::new(dir, provenance("fixture", cfg, &inputs))?;
    let manifest: Value = serde_json::from_str(&f.manifest.to_json()).expect("manifest json");
    out.json("manifest.json", manifest)?;
    out.jsonl("runs.jsonl", &f.runs_jsonl())?;
    out.jsonl("planted.jsonl", &f.planted_jsonl())?;
    println!(
        "{} queries, {} retrievers, gallery {}, K={}",
        f.manifest.num_queries(),
        retrievers,
        gallery,
        k
    );
    finish(&out);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn serve(
    data: DataArgs,
    k: u32,
    log: PathBuf,
    assets: Option<PathBuf>,
    annotators: Vec<String>,
    batch_size: usize,
    overlap: usize,
    aggregation: &str,
    listen: Option<String>,
    stdio: bool,
) -> Res {
    let policy = parse_aggregation(aggregation)?;
    let mut inputs = Inputs::default();
    let (matrix, pool) = load(&data, &mut inputs)?;
    let report = run_audit(&matrix, &pool, k)?;
    let sf = report.shortcut_free_ids();
    let overlap = overlap.min(sf.len());
    let mut plan = BatchPlan::round_robin(&sf[overlap..], &annotators, batch_size)?;
    if overlap > 0 {
        plan = plan.with_overlap("overlap", sf[..overlap].to_vec(), annotators.clone());
    }
    let log = JudgmentLog::open(&log).map_err(|e| CliError::at(&log, e))?;
    let mut service = ValidationService::new(matrix, report, plan, log)?;
    if let Some(dir) = assets {
        service = service.with_assets(dir);
    }
    if let Some(p) = policy {
        service = service.with_policy(p);
    }
    if stdio {
        let stdin = io::stdin();
        return serve_connection(&service, stdin.lock(), io::stdout().lock())
            .map_err(|e| CliError::Internal(e.to_string()));
    }
    let addr = listen.unwrap_or_else(|| "127.0.0.1:7878".into());
    let listener = TcpListener::bind(&addr).map_err(|e| CliError::Internal(format!("{addr}: {e}")))?;
    let local = listener.local_addr().map_err(|e| CliError::Internal(e.to_string()))?;
    println!("listening on {local}");
    io::stdout().flush().map_err(|e| CliError::Internal(e.to_string()))?;
    serve_tcp(Arc::new(service), listener).map_err(|e| CliError::Internal(e.to_string()))
}
