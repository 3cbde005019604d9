//! Human validation of the shortcut-free residue: task serving, judgment
//! persistence, label aggregation, issue reporting and split export.

mod aggregate;
mod export;
mod log;
mod protocol;
mod record;
mod service;

pub use aggregate::{
    aggregate_labels, issue_distribution, validity_summary, AggregationPolicy, BucketIssues, BucketValidity,
    FinalLabel, IssueCount, IssueDistribution, ValiditySummary,
};
pub use export::{export_split, export_splits, Aggregated, SplitId, SplitManifest, SplitProvenance};
pub use log::{latest, replay, JudgmentLog};
pub use protocol::{handle_line, serve_connection, serve_tcp, Request};
pub use record::{
    check_overly_broad, AnnotationRecord, AnnotationTask, DecisionStep, IssueLabel, StepOutcome, TraceEntry,
};
pub use service::{Ack, Batch, BatchPlan, Progress, ServiceReport, ValidationService};
