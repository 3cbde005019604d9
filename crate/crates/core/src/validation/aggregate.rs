use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::log::latest;
use super::{AnnotationRecord, IssueLabel};
use crate::audit::Category;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum AggregationPolicy {
    /// The assigned annotator's latest judgment governs. Without an explicit
    /// assignment a query must have been judged by exactly one annotator.
    SingleAssignee {
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        assignments: BTreeMap<String, String>,
    },
    /// Valid iff more than `threshold` of the raters say valid.
    Majority { threshold: f64, quorum: usize },
}

impl Default for AggregationPolicy {
    fn default() -> Self {
        AggregationPolicy::SingleAssignee {
            assignments: BTreeMap::new(),
        }
    }
}

impl AggregationPolicy {
    pub fn name(&self) -> String {
        match self {
            AggregationPolicy::SingleAssignee { .. } => "single_assignee".into(),
            AggregationPolicy::Majority { threshold, quorum } => format!("majority({threshold},quorum={quorum})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalLabel {
    pub valid: bool,
    /// Empty when valid; for majority, the union over invalid voters.
    pub issues: BTreeSet<IssueLabel>,
    pub raters: usize,
}

/// Final validity per judged query. Superseded judgments are ignored.
pub fn aggregate_labels(records: &[AnnotationRecord], policy: &AggregationPolicy) -> Result<BTreeMap<String, FinalLabel>> {
    let mut by_query: BTreeMap<&str, Vec<&AnnotationRecord>> = BTreeMap::new();
    let current = latest(records);
    for r in current.values() {
        by_query.entry(r.query_id.as_str()).or_default().push(r);
    }
    let mut out = BTreeMap::new();
    for (q, votes) in by_query {
        let label = match policy {
            AggregationPolicy::SingleAssignee { assignments } => {
                let chosen = match assignments.get(q) {
                    Some(a) => votes.iter().find(|r| &r.annotator_id == a).ok_or(Error::QuorumUnmet {
                        query: q.to_owned(),
                        got: 0,
                        needed: 1,
                    })?,
                    None if votes.len() == 1 => &votes[0],
                    None => return Err(Error::AmbiguousAssignee(q.to_owned())),
                };
                FinalLabel {
                    valid: chosen.valid,
                    issues: chosen.issues.clone(),
                    raters: 1,
                }
            }
            AggregationPolicy::Majority { threshold, quorum } => {
                if votes.len() < (*quorum).max(1) {
                    return Err(Error::QuorumUnmet {
                        query: q.to_owned(),
                        got: votes.len(),
                        needed: *quorum,
                    });
                }
                let valid_votes = votes.iter().filter(|r| r.valid).count();
                let valid = valid_votes as f64 / votes.len() as f64 > *threshold;
                let issues = if valid {
                    BTreeSet::new()
                } else {
                    votes.iter().flat_map(|r| r.issues.iter().copied()).collect()
                };
                FinalLabel {
                    valid,
                    issues,
                    raters: votes.len(),
                }
            }
        };
        out.insert(q.to_owned(), label);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketValidity {
    pub bucket: Category,
    pub audited: usize,
    pub valid: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValiditySummary {
    pub buckets: Vec<BucketValidity>,
    pub audited: usize,
    pub valid: usize,
}

fn percent(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

fn bucket_of(categories: &HashMap<&str, Category>, q: &str) -> Result<Category> {
    categories.get(q).copied().ok_or_else(|| Error::UnknownQuery(q.to_owned()))
}

/// Valid rate of the audited queries per audit category.
pub fn validity_summary(
    labels: &BTreeMap<String, FinalLabel>,
    categories: &HashMap<&str, Category>,
) -> Result<ValiditySummary> {
    let mut counts: BTreeMap<Category, (usize, usize)> = BTreeMap::new();
    for (q, l) in labels {
        let e = counts.entry(bucket_of(categories, q)?).or_default();
        e.0 += 1;
        e.1 += usize::from(l.valid);
    }
    let buckets: Vec<BucketValidity> = counts
        .into_iter()
        .map(|(bucket, (audited, valid))| BucketValidity {
            bucket,
            audited,
            valid,
            percent: percent(valid, audited),
        })
        .collect();
    Ok(ValiditySummary {
        audited: buckets.iter().map(|b| b.audited).sum(),
        valid: buckets.iter().map(|b| b.valid).sum(),
        buckets,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueCount {
    pub issue: IssueLabel,
    pub count: usize,
    /// Of the bucket's invalid items; issues overlap so these need not sum to 100.
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketIssues {
    pub bucket: Category,
    pub invalid: usize,
    pub issues: Vec<IssueCount>,
    /// Invalid items that carry no explicit issue label.
    pub no_issue: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueDistribution {
    pub dataset: String,
    pub buckets: Vec<BucketIssues>,
}

impl IssueDistribution {
    pub fn bucket(&self, c: Category) -> Option<&BucketIssues> {
        self.buckets.iter().find(|b| b.bucket == c)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for b in &self.buckets {
            out.push_str(&format!("{} {} (invalid: {})\n", self.dataset, b.bucket, b.invalid));
            for i in &b.issues {
                out.push_str(&format!("  {:<26} {:>6} ({:.1})\n", i.issue.as_str(), i.count, i.percent));
            }
            if b.no_issue > 0 {
                out.push_str(&format!("  {:<26} {:>6} ({:.1})\n", "no_explicit_issue", b.no_issue, percent(b.no_issue, b.invalid)));
            }
        }
        out
    }
}

/// Issue counts among invalid items per audit category. Buckets without
/// invalid items are omitted.
pub fn issue_distribution(
    dataset: &str,
    labels: &BTreeMap<String, FinalLabel>,
    categories: &HashMap<&str, Category>,
) -> Result<IssueDistribution> {
    let mut per: BTreeMap<Category, (usize, BTreeMap<IssueLabel, usize>, usize)> = BTreeMap::new();
    for (q, l) in labels {
        let bucket = bucket_of(categories, q)?;
        if l.valid {
            continue;
        }
        let e = per.entry(bucket).or_default();
        e.0 += 1;
        if l.issues.is_empty() {
            e.2 += 1;
        }
        for &i in &l.issues {
            *e.1.entry(i).or_default() += 1;
        }
    }
    Ok(IssueDistribution {
        dataset: dataset.to_owned(),
        buckets: per
            .into_iter()
            .map(|(bucket, (invalid, counts, no_issue))| BucketIssues {
                bucket,
                invalid,
                issues: IssueLabel::ALL
                    .iter()
                    .map(|&issue| {
                        let count = counts.get(&issue).copied().unwrap_or(0);
                        IssueCount {
                            issue,
                            count,
                            percent: percent(count, invalid),
                        }
                    })
                    .collect(),
                no_issue,
            })
            .collect(),
    })
}
