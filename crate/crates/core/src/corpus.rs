//! Bug-report corpus loading and partitioning.
//!
//! A corpus is a JSON-lines file, one report per line:
//!
//! ```json
//! {"id": 1, "title": "...", "description": "...", "owner": "a@x" ,
//!  "status": "Fixed", "type": "bug", "reported_time": 1234567890}
//! ```
//!
//! `owner` and `type` may be `null`. Reports are partitioned into D1
//! (untriaged: drives unsupervised feature learning) and D2 (triaged:
//! carries ground-truth owners for classification).

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus file: {0}")]
    Io(#[from] std::io::Error),
    #[error("duplicate report id {0}")]
    DuplicateId(i64),
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugReport {
    pub id: i64,
    pub title: String,
    pub description: String,
    #[serde(default)]
    pub owner: Option<String>,
    pub status: String,
    #[serde(rename = "type", default)]
    pub report_type: Option<String>,
    pub reported_time: i64,
}

/// A record that failed validation during a non-strict load.
#[derive(Clone, Debug)]
pub struct SkippedRecord {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct LoadedCorpus {
    pub reports: Vec<BugReport>,
    pub skipped: Vec<SkippedRecord>,
}

/// Reads a JSONL corpus. Malformed lines are collected in
/// [`LoadedCorpus::skipped`] unless `strict` is set, in which case the
/// first one aborts the load. Duplicate ids are always fatal: downstream
/// fold construction keys on unique ids.
pub fn load_corpus(path: &Path, strict: bool) -> Result<LoadedCorpus, CorpusError> {
    let text = fs::read_to_string(path)?;
    parse_corpus(&text, strict)
}

/// Same as [`load_corpus`] but over in-memory text.
pub fn parse_corpus(text: &str, strict: bool) -> Result<LoadedCorpus, CorpusError> {
    let mut out = LoadedCorpus::default();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        match validate_line(line) {
            Ok(report) => {
                if !seen.insert(report.id) {
                    return Err(CorpusError::DuplicateId(report.id));
                }
                out.reports.push(report);
            }
            Err(reason) => {
                if strict {
                    return Err(CorpusError::MalformedRecord {
                        line: line_no,
                        reason,
                    });
                }
                out.skipped.push(SkippedRecord {
                    line: line_no,
                    reason,
                });
            }
        }
    }
    Ok(out)
}

fn validate_line(line: &str) -> Result<BugReport, String> {
    let report: BugReport = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if report.reported_time < 0 {
        return Err(format!("negative reported_time {}", report.reported_time));
    }
    Ok(report)
}

/// Serializes reports to canonical JSONL.
pub fn write_corpus(path: &Path, reports: &[BugReport]) -> Result<(), CorpusError> {
    let mut file = fs::File::create(path)?;
    for report in reports {
        let line = serde_json::to_string(report).expect("report serialization cannot fail");
        writeln!(file, "{line}")?;
    }
    Ok(())
}

/// Rules deciding which reports count as triaged (D2). Status and type are
/// matched case-insensitively after trimming.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionRules {
    fixed_statuses: Vec<String>,
    required_type: Option<String>,
}

impl PartitionRules {
    pub fn new<I, T>(fixed_statuses: I, required_type: Option<&str>) -> Self
    where
        I: IntoIterator<Item = T>,
        T: AsRef<str>,
    {
        let mut statuses: Vec<String> = fixed_statuses
            .into_iter()
            .map(|s| s.as_ref().trim().to_lowercase())
            .collect();
        statuses.sort();
        statuses.dedup();
        PartitionRules {
            fixed_statuses: statuses,
            required_type: required_type.map(|t| t.trim().to_lowercase()),
        }
    }

    /// Trackers in the Chromium style: closed bugs are `Fixed`/`Verified`
    /// and reports carry an explicit `bug` type.
    pub fn chromium() -> Self {
        PartitionRules::new(["fixed", "verified"], Some("bug"))
    }

    /// Trackers in the Mozilla style: resolution is folded into the status
    /// string and there is no type field.
    pub fn mozilla() -> Self {
        PartitionRules::new(
            ["verified fixed", "resolved fixed", "closed fixed"],
            None,
        )
    }

    pub fn fixed_statuses(&self) -> &[String] {
        &self.fixed_statuses
    }

    pub fn required_type(&self) -> Option<&str> {
        self.required_type.as_deref()
    }

    /// A report is triaged when its status is a fixed status, its type
    /// matches the required type (when one is configured), and it has a
    /// non-empty owner.
    pub fn is_triaged(&self, report: &BugReport) -> bool {
        let status = report.status.trim().to_lowercase();
        if !self.fixed_statuses.contains(&status) {
            return false;
        }
        if let Some(required) = &self.required_type {
            match &report.report_type {
                Some(t) if t.trim().to_lowercase() == *required => {}
                _ => return false,
            }
        }
        matches!(&report.owner, Some(o) if !o.trim().is_empty())
    }
}

#[derive(Debug, Default)]
pub struct CorpusPartition {
    /// Untriaged reports: open bugs plus fixed bugs without an owner.
    pub d1: Vec<BugReport>,
    /// Triaged reports with ground-truth owners.
    pub d2: Vec<BugReport>,
}

/// Splits a corpus by [`PartitionRules::is_triaged`]. Every report lands in
/// exactly one side; input order is preserved within each side.
pub fn partition(reports: Vec<BugReport>, rules: &PartitionRules) -> CorpusPartition {
    let mut out = CorpusPartition::default();
    for report in reports {
        if rules.is_triaged(&report) {
            out.d2.push(report);
        } else {
            out.d1.push(report);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub total: usize,
    pub d1_size: usize,
    pub d2_size: usize,
    pub d2_owners: usize,
    pub time_min: Option<i64>,
    pub time_max: Option<i64>,
}

pub fn corpus_stats(partition: &CorpusPartition) -> CorpusStats {
    let mut owners = HashSet::new();
    for report in &partition.d2 {
        if let Some(owner) = &report.owner {
            owners.insert(owner.trim().to_lowercase());
        }
    }
    let times = partition
        .d1
        .iter()
        .chain(&partition.d2)
        .map(|r| r.reported_time);
    CorpusStats {
        total: partition.d1.len() + partition.d2.len(),
        d1_size: partition.d1.len(),
        d2_size: partition.d2.len(),
        d2_owners: owners.len(),
        time_min: times.clone().min(),
        time_max: times.max(),
    }
}

/// Orders reports chronologically: by reported time, ties broken by id.
/// Ids are unique, so this is a total order.
pub fn sort_chronologically(reports: &mut [BugReport]) {
    reports.sort_by_key(|r| (r.reported_time, r.id));
}
