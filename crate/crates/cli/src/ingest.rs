//! Converts tracker exports into the canonical JSONL corpus.
//!
//! Canonical JSONL input is validated and then copied byte for byte, so
//! ingest is the identity on already-canonical corpora. CSV input needs a
//! column map (`--map canonical=source`, one per field) for any column
//! whose header differs from the canonical name; unmapped fields default
//! to their own names. Required fields: id, title, description, status,
//! reported_time. `owner` may be absent entirely with
//! `--fill-missing-owner`, producing owner=null records; `type` is always
//! optional.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::json;
use triage_core::corpus::{parse_corpus, BugReport};

use crate::config::{ConfigProblem, RunConfig};
use crate::output::Output;
use crate::pipeline::Artifacts;
use crate::DataProblem;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IngestFormat {
    Jsonl,
    Csv,
}

impl std::str::FromStr for IngestFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<IngestFormat, String> {
        match s {
            "jsonl" => Ok(IngestFormat::Jsonl),
            "csv" => Ok(IngestFormat::Csv),
            other => Err(format!("unknown ingest format `{other}` (use jsonl|csv)")),
        }
    }
}

fn config_err(msg: String) -> anyhow::Error {
    anyhow::Error::new(ConfigProblem(msg))
}

fn data_err(msg: String) -> anyhow::Error {
    anyhow::Error::new(DataProblem(msg))
}

fn format_of(input: &Path, explicit: Option<IngestFormat>) -> Result<IngestFormat> {
    if let Some(format) = explicit {
        return Ok(format);
    }
    match input.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("json") => Ok(IngestFormat::Jsonl),
        Some("csv") => Ok(IngestFormat::Csv),
        _ => Err(config_err(format!(
            "cannot infer format of {} from its extension; pass --format",
            input.display()
        ))),
    }
}

const REQUIRED_FIELDS: [&str; 5] = ["id", "title", "description", "status", "reported_time"];
const OPTIONAL_FIELDS: [&str; 2] = ["owner", "type"];

/// Resolved CSV column positions for every canonical field.
struct ColumnPlan {
    id: usize,
    title: usize,
    description: usize,
    status: usize,
    reported_time: usize,
    owner: Option<usize>,
    report_type: Option<usize>,
}

fn plan_columns(
    headers: &csv::StringRecord,
    map: &HashMap<String, String>,
    fill_missing_owner: bool,
) -> Result<ColumnPlan> {
    let position = |canonical: &str| -> Option<usize> {
        let source = map.get(canonical).map(String::as_str).unwrap_or(canonical);
        headers.iter().position(|h| h == source)
    };
    let required = |canonical: &str| -> Result<usize> {
        position(canonical).ok_or_else(|| {
            let source = map.get(canonical).map(String::as_str).unwrap_or(canonical);
            data_err(format!(
                "required column `{canonical}` (source header `{source}`) not found in CSV; \
                 available headers: {}",
                headers.iter().collect::<Vec<_>>().join(", ")
            ))
        })
    };
    let owner = position("owner");
    if owner.is_none() && !fill_missing_owner {
        return Err(data_err(format!(
            "no `owner` column{}; pass --fill-missing-owner to ingest with owner=null",
            map.get("owner")
                .map(|s| format!(" (mapped to `{s}`)"))
                .unwrap_or_default()
        )));
    }
    Ok(ColumnPlan {
        id: required("id")?,
        title: required("title")?,
        description: required("description")?,
        status: required("status")?,
        reported_time: required("reported_time")?,
        owner,
        report_type: position("type"),
    })
}

fn parse_map(entries: &[String]) -> Result<HashMap<String, String>> {
    let mut map = HashMap::new();
    for entry in entries {
        let (canonical, source) = entry
            .split_once('=')
            .ok_or_else(|| config_err(format!("--map takes canonical=source, got `{entry}`")))?;
        let canonical = canonical.trim();
        if !REQUIRED_FIELDS.contains(&canonical) && !OPTIONAL_FIELDS.contains(&canonical) {
            return Err(config_err(format!(
                "--map refers to unknown canonical field `{canonical}`"
            )));
        }
        if map
            .insert(canonical.to_string(), source.trim().to_string())
            .is_some()
        {
            return Err(config_err(format!(
                "--map lists canonical field `{canonical}` twice"
            )));
        }
    }
    Ok(map)
}

/// An empty or whitespace cell in an optional column means "absent".
fn optional_cell(record: &csv::StringRecord, index: Option<usize>) -> Option<String> {
    let value = record.get(index?)?.trim();
    if value.is_empty() {
        None
    } else {
        Some(value.to_string())
    }
}

fn convert_csv(text: &str, map: &HashMap<String, String>, fill_missing_owner: bool) -> Result<String> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| data_err(format!("cannot read CSV headers: {e}")))?
        .clone();
    let plan = plan_columns(&headers, map, fill_missing_owner)?;

    let mut out = String::new();
    for (row, record) in reader.records().enumerate() {
        // Header is line 1; the first record is line 2.
        let line = row + 2;
        let record = record.map_err(|e| data_err(format!("CSV line {line}: {e}")))?;
        let cell = |index: usize, field: &str| -> Result<&str> {
            record
                .get(index)
                .ok_or_else(|| data_err(format!("CSV line {line}: missing `{field}` cell")))
        };
        let int_cell = |index: usize, field: &str| -> Result<i64> {
            let raw = cell(index, field)?.trim();
            raw.parse().map_err(|_| {
                data_err(format!(
                    "CSV line {line}: `{field}` must be an integer, got `{raw}`"
                ))
            })
        };
        let report = BugReport {
            id: int_cell(plan.id, "id")?,
            title: cell(plan.title, "title")?.to_string(),
            description: cell(plan.description, "description")?.to_string(),
            owner: optional_cell(&record, plan.owner),
            status: cell(plan.status, "status")?.to_string(),
            report_type: optional_cell(&record, plan.report_type),
            reported_time: int_cell(plan.reported_time, "reported_time")?,
        };
        out.push_str(&serde_json::to_string(&report)?);
        out.push('\n');
    }
    Ok(out)
}

#[derive(clap::Args)]
pub struct IngestArgs {
    /// Export file to convert.
    pub input: PathBuf,
    /// Input format; inferred from the file extension when omitted.
    #[arg(long)]
    pub format: Option<IngestFormat>,
    /// CSV column mapping, one `canonical=source` entry per differing
    /// header. Repeatable.
    #[arg(long = "map", value_name = "CANONICAL=SOURCE")]
    pub map: Vec<String>,
    /// Accept CSV without an owner column, writing owner=null.
    #[arg(long)]
    pub fill_missing_owner: bool,
    /// Destination path; defaults to <out_dir>/corpus.jsonl.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn run(config: &RunConfig, out: &Output, args: &IngestArgs) -> Result<()> {
    let artifacts = Artifacts::new(config);
    let output = args
        .output
        .clone()
        .unwrap_or_else(|| config.out_dir.join("corpus.jsonl"));
    if let (Ok(a), Ok(b)) = (args.input.canonicalize(), output.canonicalize()) {
        if a == b {
            return Err(config_err(format!(
                "refusing to overwrite the input: {} is both input and output",
                args.input.display()
            )));
        }
    }
    let format = format_of(&args.input, args.format)?;
    let text = std::fs::read_to_string(&args.input)
        .with_context(|| format!("cannot read {}", args.input.display()))?;

    let canonical = match format {
        // Validate, then copy the original bytes: ingest of an
        // already-canonical corpus is the identity.
        IngestFormat::Jsonl => {
            if !args.map.is_empty() {
                return Err(config_err(
                    "--map only applies to CSV input".to_string(),
                ));
            }
            parse_corpus(&text, true)
                .map_err(|e| data_err(format!("{}: {e}", args.input.display())))?;
            text
        }
        IngestFormat::Csv => {
            let map = parse_map(&args.map)?;
            let converted = convert_csv(&text, &map, args.fill_missing_owner)?;
            // The converted corpus must itself survive a strict load
            // (unique ids, complete records) before we call it canonical.
            parse_corpus(&converted, true)
                .map_err(|e| data_err(format!("{}: {e}", args.input.display())))?;
            converted
        }
    };

    let records = canonical.lines().filter(|l| !l.trim().is_empty()).count();
    artifacts.ensure_dir()?;
    if let Some(parent) = output.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("cannot create {}", parent.display()))?;
        }
    }
    std::fs::write(&output, &canonical)
        .with_context(|| format!("cannot write {}", output.display()))?;
    out.note(
        "written",
        &format!("{records} reports -> {}", output.display()),
        &[
            ("records", json!(records)),
            ("output", json!(output.display().to_string())),
        ],
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_map() -> HashMap<String, String> {
        HashMap::new()
    }

    #[test]
    fn csv_with_canonical_headers_converts_without_a_map() {
        let csv = "id,title,description,owner,status,type,reported_time\n\
                   1,crash,boom,a@x.com,Fixed,Bug,100\n\
                   2,hang,spin,,Assigned,,200\n";
        let jsonl = convert_csv(csv, &default_map(), false).unwrap();
        let loaded = parse_corpus(&jsonl, true).unwrap();
        assert_eq!(loaded.reports.len(), 2);
        assert_eq!(loaded.reports[0].owner.as_deref(), Some("a@x.com"));
        assert_eq!(loaded.reports[1].owner, None);
        assert_eq!(loaded.reports[1].report_type, None);
    }

    #[test]
    fn renamed_columns_need_a_map() {
        let csv = "bug,summary,details,state,opened\n7,t,d,Fixed,50\n";
        let map = parse_map(&[
            "id=bug".into(),
            "title=summary".into(),
            "description=details".into(),
            "status=state".into(),
            "reported_time=opened".into(),
        ])
        .unwrap();
        assert!(convert_csv(csv, &map, false).is_err());
        let jsonl = convert_csv(csv, &map, true).unwrap();
        let loaded = parse_corpus(&jsonl, true).unwrap();
        assert_eq!(loaded.reports[0].id, 7);
        assert_eq!(loaded.reports[0].owner, None);
    }

    #[test]
    fn bad_rows_are_reported_with_line_numbers() {
        let csv = "id,title,description,status,reported_time\n1,t,d,Fixed,soon\n";
        let err = convert_csv(csv, &default_map(), true).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(err.to_string().contains("reported_time"), "{err}");
    }

    #[test]
    fn unknown_map_fields_are_config_errors() {
        assert!(parse_map(&["severity=sev".into()]).is_err());
        assert!(parse_map(&["id".into()]).is_err());
        assert!(parse_map(&["id=a".into(), "id=b".into()]).is_err());
    }
}
