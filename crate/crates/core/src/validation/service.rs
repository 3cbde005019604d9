use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Component, Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate_labels, issue_distribution, validity_summary, AggregationPolicy};
use super::export::{export_split, Aggregated, SplitId, SplitManifest};
use super::{AnnotationRecord, AnnotationTask, DecisionStep, IssueDistribution, JudgmentLog, ValiditySummary};
use crate::audit::{build_panel, AuditReport, Pool};
use crate::error::{Error, Result};
use crate::rank_store::RunMatrix;

/// A fixed list of queries served, in order, to each of its annotators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub id: String,
    pub query_ids: Vec<String>,
    pub annotators: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batches: Vec<Batch>,
}

impl BatchPlan {
    /// Consecutive batches of `size` queries dealt to annotators in turn.
    pub fn round_robin(query_ids: &[String], annotators: &[String], size: usize) -> Result<Self> {
        if annotators.is_empty() || size == 0 {
            return Err(Error::InvalidConfig("round robin needs annotators and a positive batch size".into()));
        }
        let batches = query_ids
            .chunks(size)
            .enumerate()
            .map(|(i, chunk)| Batch {
                id: format!("b{i:03}"),
                query_ids: chunk.to_vec(),
                annotators: vec![annotators[i % annotators.len()].clone()],
            })
            .collect();
        Ok(Self { batches })
    }

    /// Adds a batch every listed annotator judges in full.
    pub fn with_overlap(mut self, id: impl Into<String>, query_ids: Vec<String>, annotators: Vec<String>) -> Self {
        self.batches.push(Batch {
            id: id.into(),
            query_ids,
            annotators,
        });
        self
    }

    pub fn batch_ids(&self) -> Vec<String> {
        self.batches.iter().map(|b| b.id.clone()).collect()
    }

    /// Query to annotator for queries that sit in a single-annotator batch.
    pub fn assignments(&self) -> BTreeMap<String, String> {
        self.batches
            .iter()
            .filter(|b| b.annotators.len() == 1)
            .flat_map(|b| b.query_ids.iter().map(|q| (q.clone(), b.annotators[0].clone())))
            .collect()
    }

    fn for_annotator<'a>(&'a self, annotator: &'a str) -> impl Iterator<Item = &'a Batch> + 'a {
        self.batches
            .iter()
            .filter(move |b| b.annotators.iter().any(|a| a == annotator))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub query: String,
    pub annotator: String,
    /// Position of the record in the judgment log.
    pub sequence: usize,
    pub supersedes: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub annotator: String,
    pub assigned: usize,
    pub judged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceReport {
    pub judgments: usize,
    pub aggregation: String,
    pub aggregated: usize,
    pub validity: ValiditySummary,
    pub issues: IssueDistribution,
}

#[derive(Debug, Default)]
struct Sessions {
    registered: BTreeSet<String>,
    served: HashSet<(String, String)>,
}

/// Annotation workflow over one audited benchmark. Task serving and reads
/// run concurrently; judgment writes go through a single log writer.
#[derive(Debug)]
pub struct ValidationService {
    matrix: RunMatrix,
    audit: AuditReport,
    pool: Pool,
    plan: BatchPlan,
    policy: AggregationPolicy,
    assets: Option<PathBuf>,
    sessions: RwLock<Sessions>,
    log: Mutex<JudgmentLog>,
}

impl ValidationService {
    pub fn new(matrix: RunMatrix, audit: AuditReport, plan: BatchPlan, log: JudgmentLog) -> Result<Self> {
        let pool = Pool::from_ids(matrix.manifest(), &audit.pool)?;
        for b in &plan.batches {
            for q in &b.query_ids {
                matrix.manifest().require_query(q)?;
            }
        }
        let policy = AggregationPolicy::SingleAssignee {
            assignments: plan.assignments(),
        };
        Ok(Self {
            matrix,
            audit,
            pool,
            plan,
            policy,
            assets: None,
            sessions: RwLock::new(Sessions::default()),
            log: Mutex::new(log),
        })
    }

    pub fn with_policy(mut self, policy: AggregationPolicy) -> Self {
        self.policy = policy;
        self
    }

    /// Directory that asset references resolve against, read-only.
    pub fn with_assets(mut self, dir: impl Into<PathBuf>) -> Self {
        self.assets = Some(dir.into());
        self
    }

    pub fn plan(&self) -> &BatchPlan {
        &self.plan
    }

    pub fn register(&self, annotator: &str) -> Result<()> {
        if annotator.is_empty() {
            return Err(Error::InvalidConfig("annotator id is empty".into()));
        }
        self.sessions.write().expect("session lock").registered.insert(annotator.to_owned());
        Ok(())
    }

    fn judged_by(&self, annotator: &str) -> HashSet<String> {
        self.log
            .lock()
            .expect("log lock")
            .history()
            .iter()
            .filter(|r| r.annotator_id == annotator)
            .map(|r| r.query_id.clone())
            .collect()
    }

    /// First unjudged query of the annotator's batches; repeated calls
    /// return the same task until it is judged.
    pub fn next_task(&self, annotator: &str) -> Result<Option<AnnotationTask>> {
        if !self.sessions.read().expect("session lock").registered.contains(annotator) {
            return Err(Error::UnknownAnnotator(annotator.to_owned()));
        }
        let judged = self.judged_by(annotator);
        let next = self
            .plan
            .for_annotator(annotator)
            .flat_map(|b| b.query_ids.iter().map(move |q| (b, q)))
            .find(|(_, q)| !judged.contains(*q));
        let Some((batch, query)) = next else {
            return Ok(None);
        };
        let manifest = self.matrix.manifest();
        let qi = manifest.require_query(query)?;
        let panel = build_panel(&self.matrix, query, self.audit.config.panel_depth, &self.pool)?;
        let assets = manifest.assets(qi);
        self.sessions
            .write()
            .expect("session lock")
            .served
            .insert((query.clone(), annotator.to_owned()));
        Ok(Some(AnnotationTask {
            query_id: query.clone(),
            batch_id: batch.id.clone(),
            reference: assets.map(|a| a.reference.clone()),
            text: assets.map(|a| a.text.clone()),
            targets: assets.map(|a| a.targets.clone()).unwrap_or_default(),
            panel: panel.items,
            steps: DecisionStep::ORDER.to_vec(),
        }))
    }

    pub fn submit(&self, record: AnnotationRecord) -> Result<Ack> {
        record.validate()?;
        {
            let s = self.sessions.read().expect("session lock");
            if !s.registered.contains(&record.annotator_id) {
                return Err(Error::UnknownAnnotator(record.annotator_id.clone()));
            }
        }
        let mut log = self.log.lock().expect("log lock");
        let previously = log
            .history()
            .iter()
            .any(|r| r.query_id == record.query_id && r.annotator_id == record.annotator_id);
        let served = self
            .sessions
            .read()
            .expect("session lock")
            .served
            .contains(&(record.query_id.clone(), record.annotator_id.clone()));
        if !served && !previously {
            return Err(Error::UnservedTask {
                query: record.query_id,
                annotator: record.annotator_id,
            });
        }
        let ack = Ack {
            query: record.query_id.clone(),
            annotator: record.annotator_id.clone(),
            sequence: log.history().len(),
            supersedes: previously,
        };
        log.append(record)?;
        Ok(ack)
    }

    pub fn progress(&self) -> Vec<Progress> {
        let registered = self.sessions.read().expect("session lock").registered.clone();
        registered
            .into_iter()
            .map(|a| {
                let assigned: BTreeSet<&String> = self.plan.for_annotator(&a).flat_map(|b| &b.query_ids).collect();
                let judged = self.judged_by(&a);
                Progress {
                    judged: assigned.iter().filter(|q| judged.contains(q.as_str())).count(),
                    assigned: assigned.len(),
                    annotator: a,
                }
            })
            .collect()
    }

    pub fn history(&self) -> Vec<AnnotationRecord> {
        self.log.lock().expect("log lock").history().to_vec()
    }

    pub fn aggregate(&self) -> Result<BTreeMap<String, super::FinalLabel>> {
        aggregate_labels(&self.history(), &self.policy)
    }

    pub fn report(&self) -> Result<ServiceReport> {
        let labels = self.aggregate()?;
        let categories = self.audit.label_map();
        Ok(ServiceReport {
            judgments: self.history().len(),
            aggregation: self.policy.name(),
            aggregated: labels.len(),
            validity: validity_summary(&labels, &categories)?,
            issues: issue_distribution(&self.audit.benchmark_id, &labels, &categories)?,
        })
    }

    pub fn export(&self, split: SplitId) -> Result<SplitManifest> {
        let labels = self.aggregate()?;
        let name = self.policy.name();
        let batches = self.plan.batch_ids();
        let agg = (!labels.is_empty()).then_some(Aggregated {
            labels: &labels,
            policy: &name,
            batches: &batches,
        });
        export_split(&self.audit, agg, split)
    }

    pub fn compact(&self) -> Result<Option<PathBuf>> {
        self.log.lock().expect("log lock").compact()
    }

    /// Bytes of an asset under the asset directory. Absolute paths, parent
    /// components and symlinks leading outside the directory are refused.
    pub fn asset(&self, reference: &str) -> Result<Vec<u8>> {
        let root = self.assets.as_ref().ok_or(Error::NoAssetDir)?;
        let rel = Path::new(reference);
        if !rel.components().all(|c| matches!(c, Component::Normal(_))) {
            return Err(Error::AssetOutsideRoot(reference.to_owned()));
        }
        let root = root.canonicalize()?;
        let full = root.join(rel).canonicalize()?;
        if !full.starts_with(&root) {
            return Err(Error::AssetOutsideRoot(reference.to_owned()));
        }
        Ok(std::fs::read(full)?)
    }
}
