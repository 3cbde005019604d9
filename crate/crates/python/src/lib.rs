use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use cir::audit::{self, AuditConfig, AuditReport, Category, CategoryCounts, Pool};
use cir::metrics::{self, CompGap, MetricKind, QuerySplit};
use cir::rank_store::{self, RunMatrix, RunMatrixBuilder};
use cir::stats::{self, BootstrapConfig, LabelMatrix};
use cir::validation::{self, BatchPlan, JudgmentLog, ValidationService};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

fn err(e: cir::Error) -> PyErr {
    match e.root() {
        cir::Error::Io(io) => PyOSError::new_err(io.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn category(s: &str) -> PyResult<Category> {
    s.parse().map_err(PyValueError::new_err)
}

fn metric_kind(s: &str) -> PyResult<MetricKind> {
    s.parse().map_err(err)
}

fn pool(m: &RunMatrix, ids: Option<Vec<String>>) -> PyResult<Pool> {
    match ids {
        Some(ids) if !ids.is_empty() => Pool::from_ids(m.manifest(), &ids),
        _ => Pool::all(m.manifest()),
    }
    .map_err(err)
}

/// Rank exports of a pool of retrievers over one benchmark.
#[pyclass(name = "RunMatrix", frozen)]
struct PyRunMatrix {
    inner: RunMatrix,
}

#[pymethods]
impl PyRunMatrix {
    #[staticmethod]
    fn load(manifest: PathBuf, runs: Vec<PathBuf>) -> PyResult<Self> {
        let m = rank_store::load_manifest(File::open(&manifest)?).map_err(err)?;
        let mut b = RunMatrixBuilder::new(m);
        for path in runs {
            b.add_jsonl(BufReader::new(File::open(&path)?)).map_err(err)?;
        }
        Ok(Self { inner: b.finish() })
    }

    #[staticmethod]
    fn from_strings(manifest_json: &str, runs_jsonl: &str) -> PyResult<Self> {
        let m = rank_store::load_manifest(manifest_json.as_bytes()).map_err(err)?;
        let inner = rank_store::ingest_runs(runs_jsonl.as_bytes(), m).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn benchmark_id(&self) -> String {
        self.inner.manifest().benchmark_id().to_owned()
    }

    #[getter]
    fn gallery_size(&self) -> u32 {
        self.inner.manifest().gallery_size()
    }

    #[getter]
    fn query_ids(&self) -> Vec<String> {
        self.inner.manifest().query_ids().to_vec()
    }

    #[getter]
    fn retriever_ids(&self) -> Vec<String> {
        self.inner.manifest().retriever_ids().to_vec()
    }

    /// Cells missing from the exports as (query, retriever, condition).
    fn missing_cells(&self) -> Vec<(String, String, String)> {
        self.inner
            .missing_cells()
            .into_iter()
            .map(|c| (c.query, c.retriever, c.condition.to_string()))
            .collect()
    }

    fn runs_jsonl(&self) -> PyResult<String> {
        let mut out = Vec::new();
        self.inner.write_jsonl(&mut out).map_err(err)?;
        Ok(String::from_utf8(out).expect("jsonl is utf-8"))
    }

    fn __len__(&self) -> usize {
        self.inner.manifest().num_queries()
    }
}

/// Synthetic benchmark with planted categories.
#[pyclass(name = "Fixture", frozen)]
struct PyFixture {
    inner: rank_store::Fixture,
}

#[pymethods]
impl PyFixture {
    fn matrix(&self) -> PyRunMatrix {
        PyRunMatrix { inner: self.inner.matrix() }
    }

    fn manifest_json(&self) -> String {
        self.inner.manifest.to_json()
    }

    fn runs_jsonl(&self) -> String {
        self.inner.runs_jsonl()
    }

    /// Planted category per query id.
    fn planted(&self) -> BTreeMap<String, String> {
        self.inner.planted.iter().map(|(q, c)| (q.clone(), c.to_string())).collect()
    }
}

#[pyfunction]
#[pyo3(signature = (counts, retrievers=11, gallery=500, k=10, seed=1, relevant=1, topk=None))]
fn generate_fixture(
    counts: HashMap<String, usize>,
    retrievers: usize,
    gallery: u32,
    k: u32,
    seed: u64,
    relevant: usize,
    topk: Option<u32>,
) -> PyResult<PyFixture> {
    let mut c = CategoryCounts::default();
    for (name, n) in counts {
        *c.get_mut(category(&name)?) = n;
    }
    let mut spec = rank_store::FixtureSpec::new(c, retrievers, gallery, k, seed);
    spec.relevant_per_query = relevant;
    // multimodal top-k lists feed the annotation panel; defaults to K
    spec.topk_depth = Some(topk.unwrap_or(k));
    Ok(PyFixture {
        inner: rank_store::generate_fixture(&spec).map_err(err)?,
    })
}

/// Per-query audit categories at one cutoff.
#[pyclass(name = "AuditReport", frozen)]
struct PyAuditReport {
    inner: AuditReport,
}

#[pymethods]
impl PyAuditReport {
    #[getter]
    fn cutoff(&self) -> u32 {
        self.inner.config.cutoff
    }

    #[getter]
    fn pool(&self) -> Vec<String> {
        self.inner.pool.clone()
    }

    #[getter]
    fn counts(&self) -> BTreeMap<String, usize> {
        Category::ALL
            .iter()
            .map(|&c| (c.to_string(), self.inner.counts.get(c)))
            .collect()
    }

    #[getter]
    fn shortcut_rate(&self) -> f64 {
        self.inner.shortcut_rate()
    }

    #[getter]
    fn run_id(&self) -> String {
        self.inner.run_id()
    }

    fn percent(&self, category_name: &str) -> PyResult<f64> {
        Ok(self.inner.percent(self.inner.counts.get(category(category_name)?)))
    }

    fn labels(&self) -> BTreeMap<String, String> {
        self.inner
            .labels
            .iter()
            .map(|l| (l.query.clone(), l.label.category.to_string()))
            .collect()
    }

    fn shortcut_free_ids(&self) -> Vec<String> {
        self.inner.shortcut_free_ids()
    }

    fn labels_jsonl(&self) -> String {
        self.inner.labels_jsonl()
    }

    fn table_text(&self) -> String {
        self.inner.table_text()
    }
}

#[pyfunction(name = "audit")]
#[pyo3(signature = (matrix, k=10, pool=None))]
fn run_audit(matrix: &PyRunMatrix, k: u32, pool: Option<Vec<String>>) -> PyResult<PyAuditReport> {
    let p = self::pool(&matrix.inner, pool)?;
    let inner = audit::audit_dataset(&matrix.inner, &AuditConfig::new(k), &p).map_err(err)?;
    Ok(PyAuditReport { inner })
}

/// (cutoff, shortcut count, shortcut rate) per cutoff.
#[pyfunction]
#[pyo3(signature = (matrix, cutoffs, pool=None))]
fn cutoff_sweep(matrix: &PyRunMatrix, cutoffs: Vec<u32>, pool: Option<Vec<String>>) -> PyResult<Vec<(u32, usize, f64)>> {
    let p = self::pool(&matrix.inner, pool)?;
    Ok(audit::cutoff_sweep(&matrix.inner, &cutoffs, &p)
        .map_err(err)?
        .into_iter()
        .map(|s| (s.cutoff, s.shortcut_count, s.rate))
        .collect())
}

/// Metric of one ranked list, e.g. `metric("ndcg@10", [3, 7], 2)`.
#[pyfunction]
fn metric(kind: &str, ranks: Vec<u32>, relevance_count: usize) -> PyResult<f64> {
    metrics::metric(metric_kind(kind)?, &ranks, relevance_count).map_err(err)
}

/// None when the multimodal score is zero.
#[pyfunction]
fn comp_gap(mm: f64, image: f64, text: f64) -> Option<f64> {
    match metrics::comp_gap_of(mm, image, text) {
        CompGap::Value(v) => Some(v),
        CompGap::Undefined => None,
    }
}

/// MM score and deltas per retriever and split, as a JSON document.
#[pyfunction]
#[pyo3(signature = (matrix, splits, metric="recall@10", pool=None))]
fn split_report(
    matrix: &PyRunMatrix,
    splits: Vec<(String, Vec<String>)>,
    metric: &str,
    pool: Option<Vec<String>>,
) -> PyResult<String> {
    let p = self::pool(&matrix.inner, pool)?;
    let splits: Vec<QuerySplit> = splits.into_iter().map(|(id, q)| QuerySplit::new(id, q)).collect();
    let report = metrics::split_report(&matrix.inner, &splits, metric_kind(metric)?, &p).map_err(err)?;
    Ok(serde_json::to_string(&report).expect("report serialises"))
}

/// (estimate, lower, upper) of the mean.
#[pyfunction]
#[pyo3(signature = (values, resamples=10_000, seed=1, confidence=0.95))]
fn bootstrap_mean_ci(values: Vec<f64>, resamples: usize, seed: u64, confidence: f64) -> PyResult<(f64, f64, f64)> {
    let cfg = BootstrapConfig {
        resamples,
        confidence,
        master_seed: seed,
    };
    let ci = stats::bootstrap_mean_ci(&values, &cfg).map_err(err)?;
    Ok((ci.estimate, ci.lower, ci.upper))
}

#[pyfunction]
fn fleiss_kappa(rows: Vec<Vec<String>>) -> PyResult<Option<f64>> {
    stats::fleiss_kappa(&LabelMatrix::complete(rows).map_err(err)?).map_err(err)
}

/// Nominal alpha; None marks a missing rating.
#[pyfunction]
fn krippendorff_alpha(rows: Vec<Vec<Option<String>>>) -> PyResult<Option<f64>> {
    stats::krippendorff_alpha_nominal(&LabelMatrix::new(rows).map_err(err)?).map_err(err)
}

#[pyfunction]
fn cohen_kappa(a: Vec<String>, b: Vec<String>) -> PyResult<Option<f64>> {
    stats::cohen_kappa(&a, &b).map_err(err)
}

/// Validation workflow over the shortcut-free queries of an audit,
/// driven through the line protocol.
#[pyclass(name = "ValidationService", frozen)]
struct PyValidationService {
    inner: ValidationService,
}

#[pymethods]
impl PyValidationService {
    #[new]
    #[pyo3(signature = (matrix, report, annotators, batch_size=50, log=None, assets=None))]
    fn new(
        matrix: &PyRunMatrix,
        report: &PyAuditReport,
        annotators: Vec<String>,
        batch_size: usize,
        log: Option<PathBuf>,
        assets: Option<PathBuf>,
    ) -> PyResult<Self> {
        let plan = BatchPlan::round_robin(&report.inner.shortcut_free_ids(), &annotators, batch_size).map_err(err)?;
        let log = match log {
            Some(path) => JudgmentLog::open(path).map_err(err)?,
            None => JudgmentLog::in_memory(),
        };
        let mut inner =
            ValidationService::new(matrix.inner.clone(), report.inner.clone(), plan, log).map_err(err)?;
        if let Some(dir) = assets {
            inner = inner.with_assets(dir);
        }
        Ok(Self { inner })
    }

    /// One protocol request line; returns the raw response bytes.
    fn request<'py>(&self, py: Python<'py>, line: &str) -> Bound<'py, PyBytes> {
        let out = py.detach(|| validation::handle_line(&self.inner, line));
        PyBytes::new(py, &out)
    }
}

#[pymodule]
fn cir_audit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRunMatrix>()?;
    m.add_class::<PyFixture>()?;
    m.add_class::<PyAuditReport>()?;
    m.add_class::<PyValidationService>()?;
    m.add_function(wrap_pyfunction!(generate_fixture, m)?)?;
    m.add_function(wrap_pyfunction!(run_audit, m)?)?;
    m.add_function(wrap_pyfunction!(cutoff_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(metric, m)?)?;
    m.add_function(wrap_pyfunction!(comp_gap, m)?)?;
    m.add_function(wrap_pyfunction!(split_report, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap_mean_ci, m)?)?;
    m.add_function(wrap_pyfunction!(fleiss_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(krippendorff_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(cohen_kappa, m)?)?;
    Ok(())
}
