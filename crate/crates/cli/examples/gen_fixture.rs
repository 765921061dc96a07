//! Regenerates the bundled tracker export used by the integration tests.
//!
//! The fixture mimics a third-party tracker dump: CSV with non-canonical
//! column names, quoted multi-line descriptions, and a mix of triaged and
//! untriaged reports. Run from the workspace root:
//!
//! ```text
//! cargo run -p triage-cli --example gen_fixture
//! ```

use triage_core::synth::realistic_corpus;

fn main() -> anyhow::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "crates/cli/tests/fixtures/tracker-export.csv".to_string());
    let reports = realistic_corpus(500, 91);
    let mut writer = csv::Writer::from_path(&path)?;
    writer.write_record(["bug", "summary", "details", "assignee", "state", "kind", "opened"])?;
    for r in &reports {
        writer.write_record([
            r.id.to_string(),
            r.title.clone(),
            r.description.clone(),
            r.owner.clone().unwrap_or_default(),
            r.status.clone(),
            r.report_type.clone().unwrap_or_default(),
            r.reported_time.to_string(),
        ])?;
    }
    writer.flush()?;
    eprintln!("wrote {} reports to {path}", reports.len());
    Ok(())
}
