use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audit::PanelItem;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueLabel {
    InvalidText,
    InvalidReferenceImage,
    InvalidTargetImage,
    OverlyBroadQuery,
}

impl IssueLabel {
    pub const ALL: [IssueLabel; 4] = [
        IssueLabel::InvalidText,
        IssueLabel::InvalidReferenceImage,
        IssueLabel::InvalidTargetImage,
        IssueLabel::OverlyBroadQuery,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IssueLabel::InvalidText => "invalid_text",
            IssueLabel::InvalidReferenceImage => "invalid_reference_image",
            IssueLabel::InvalidTargetImage => "invalid_target_image",
            IssueLabel::OverlyBroadQuery => "overly_broad_query",
        }
    }

    /// The decision step at which this issue is raised.
    pub fn step(self) -> DecisionStep {
        match self {
            IssueLabel::InvalidText => DecisionStep::TextValidity,
            IssueLabel::InvalidReferenceImage => DecisionStep::ReferenceQuality,
            IssueLabel::InvalidTargetImage => DecisionStep::TargetCorrectness,
            IssueLabel::OverlyBroadQuery => DecisionStep::Specificity,
        }
    }
}

impl fmt::Display for IssueLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IssueLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        IssueLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown issue label `{s}`"))
    }
}

/// The four checks, in the order annotators must walk them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionStep {
    TextValidity,
    ReferenceQuality,
    TargetCorrectness,
    Specificity,
}

impl DecisionStep {
    pub const ORDER: [DecisionStep; 4] = [
        DecisionStep::TextValidity,
        DecisionStep::ReferenceQuality,
        DecisionStep::TargetCorrectness,
        DecisionStep::Specificity,
    ];

    pub fn issue(self) -> IssueLabel {
        match self {
            DecisionStep::TextValidity => IssueLabel::InvalidText,
            DecisionStep::ReferenceQuality => IssueLabel::InvalidReferenceImage,
            DecisionStep::TargetCorrectness => IssueLabel::InvalidTargetImage,
            DecisionStep::Specificity => IssueLabel::OverlyBroadQuery,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOutcome {
    Pass,
    Flag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: DecisionStep,
    pub outcome: StepOutcome,
}

/// One judgment of one query by one annotator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    #[serde(rename = "query")]
    pub query_id: String,
    #[serde(rename = "annotator")]
    pub annotator_id: String,
    /// Milliseconds since the epoch; the latest judgment supersedes.
    pub timestamp: u64,
    pub issues: BTreeSet<IssueLabel>,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub decision_trace: Vec<TraceEntry>,
}

impl AnnotationRecord {
    /// Builds a consistent record: the trace flags exactly the steps of
    /// `issues` and validity follows from the issue set.
    pub fn from_issues(
        query_id: impl Into<String>,
        annotator_id: impl Into<String>,
        timestamp: u64,
        issues: impl IntoIterator<Item = IssueLabel>,
    ) -> Self {
        let issues: BTreeSet<IssueLabel> = issues.into_iter().collect();
        let decision_trace = DecisionStep::ORDER
            .iter()
            .map(|&step| TraceEntry {
                step,
                outcome: if issues.contains(&step.issue()) {
                    StepOutcome::Flag
                } else {
                    StepOutcome::Pass
                },
            })
            .collect();
        Self {
            query_id: query_id.into(),
            annotator_id: annotator_id.into(),
            timestamp,
            valid: issues.is_empty(),
            issues,
            note: None,
            decision_trace,
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.valid && !self.issues.is_empty() {
            return Err(Error::ValidWithIssues(self.query_id.clone()));
        }
        if !self.valid && self.issues.is_empty() {
            return Err(Error::InvalidWithoutIssues(self.query_id.clone()));
        }
        let steps: Vec<DecisionStep> = self.decision_trace.iter().map(|e| e.step).collect();
        if steps != DecisionStep::ORDER {
            return Err(Error::DecisionTrace(format!(
                "expected steps {:?}, got {steps:?}",
                DecisionStep::ORDER
            )));
        }
        for e in &self.decision_trace {
            let flagged = e.outcome == StepOutcome::Flag;
            if flagged != self.issues.contains(&e.step.issue()) {
                return Err(Error::DecisionTrace(format!(
                    "step {:?} is {:?} but issue {} is {}",
                    e.step,
                    e.outcome,
                    e.step.issue(),
                    if flagged { "absent" } else { "present" }
                )));
            }
        }
        Ok(())
    }
}

/// Everything an annotator sees for one query. The audit category is
/// deliberately not part of this document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub query_id: String,
    pub batch_id: String,
    pub reference: Option<String>,
    pub text: Option<String>,
    pub targets: Vec<String>,
    pub panel: Vec<PanelItem>,
    pub steps: Vec<DecisionStep>,
}

/// Advisory for the specificity step: at least `k` plausible panel items
/// that are not ground truth. Marks outside the panel are ignored.
pub fn check_overly_broad(
    panel: &[PanelItem],
    plausible: &BTreeSet<String>,
    relevant: &BTreeSet<String>,
    k: usize,
) -> bool {
    panel
        .iter()
        .filter(|p| plausible.contains(&p.item_id) && !relevant.contains(&p.item_id))
        .count()
        >= k
}
