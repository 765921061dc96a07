//! Command output channels.
//!
//! Every command emits a stream of events: the resolved configuration,
//! progress notes, and result summaries. In plain mode the events go to
//! stderr as readable text and only deliverable data (tables, prediction
//! JSON) is printed to stdout. With `--json`, events become NDJSON records
//! on stdout — one object per line, each with an `"event"` field — and
//! stdout carries nothing else.

use serde_json::{json, Map, Value};

use crate::config::RunConfig;

#[derive(Clone, Copy, Debug)]
pub struct Output {
    json: bool,
}

impl Output {
    pub fn new(json: bool) -> Output {
        Output { json }
    }

    fn emit(&self, record: Value) {
        debug_assert!(record.get("event").is_some());
        println!("{record}");
    }

    /// Echoes the resolved configuration, plus any command-specific
    /// key/value pairs (flags that are not part of the shared config).
    pub fn config(&self, command: &str, config: &RunConfig, extra: &[(&str, String)]) {
        if self.json {
            let mut fields = Map::new();
            for (key, value) in config.pairs() {
                fields.insert(key.to_string(), Value::String(value));
            }
            for (key, value) in extra {
                fields.insert(key.to_string(), Value::String(value.clone()));
            }
            self.emit(json!({
                "event": "config",
                "command": command,
                "config": Value::Object(fields),
            }));
        } else {
            eprintln!("[config] command = {command}");
            for (key, value) in config.pairs() {
                eprintln!("[config] {key} = {value}");
            }
            for (key, value) in extra {
                eprintln!("[config] {key} = {value}");
            }
        }
    }

    /// A progress or summary note. `fields` carry the machine-readable
    /// payload in JSON mode; the text form renders them inline.
    pub fn note(&self, event: &str, text: &str, fields: &[(&str, Value)]) {
        if self.json {
            let mut record = Map::new();
            record.insert("event".into(), Value::String(event.to_string()));
            record.insert("message".into(), Value::String(text.to_string()));
            for (key, value) in fields {
                record.insert(key.to_string(), value.clone());
            }
            self.emit(Value::Object(record));
        } else {
            eprintln!("[{event}] {text}");
        }
    }

    /// Deliverable output: stdout in plain mode, an NDJSON record in JSON
    /// mode. `payload` must be the full machine-readable equivalent.
    pub fn deliver(&self, event: &str, plain: &str, payload: Value) {
        if self.json {
            let mut record = Map::new();
            record.insert("event".into(), Value::String(event.to_string()));
            match payload {
                Value::Object(fields) => record.extend(fields),
                other => {
                    record.insert("data".into(), other);
                }
            }
            self.emit(Value::Object(record));
        } else {
            println!("{plain}");
        }
    }
}
