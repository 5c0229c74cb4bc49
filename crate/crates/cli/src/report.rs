//! The report-v1 output format and its CSV flattening.

use serde::Serialize;
use serde_json::Value;

pub const SCHEMA: &str = "report-v1";

#[derive(Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub version: &'static str,
    pub command: String,
    /// Resolved configuration: everything needed to reproduce `results`
    /// bit-exactly, including seeds and sampling parameters.
    pub config: Value,
    pub results: Value,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn new(command: &str, config: Value, results: Value, warnings: Vec<String>) -> Self {
        Report {
            schema: SCHEMA,
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config,
            results,
            warnings,
        }
    }

    pub fn render(&self, csv: bool) -> String {
        if csv {
            to_csv(&self.results)
        } else {
            serde_json::to_string_pretty(self).expect("report serializes") + "\n"
        }
    }
}

/// Flatten the results section: scalar fields become `path,value` rows,
/// arrays of objects become CSV tables introduced by a `[path]` line.
pub fn to_csv(results: &Value) -> String {
    let mut scalars: Vec<(String, String)> = Vec::new();
    let mut tables: Vec<(String, Vec<Value>)> = Vec::new();
    walk(results, "", &mut scalars, &mut tables);
    let mut out = String::new();
    for (path, value) in &scalars {
        out.push_str(&format!("{},{}\n", csv_escape(path), value));
    }
    for (path, rows) in &tables {
        out.push('\n');
        out.push_str(&format!("[{path}]\n"));
        let mut columns: Vec<String> = Vec::new();
        for row in rows {
            if let Value::Object(map) = row {
                for key in map.keys() {
                    if !columns.contains(key) {
                        columns.push(key.clone());
                    }
                }
            }
        }
        out.push_str(&columns.join(","));
        out.push('\n');
        for row in rows {
            let cells: Vec<String> = columns
                .iter()
                .map(|c| row.get(c).map(render_scalar).unwrap_or_default())
                .collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
    }
    out
}

fn walk(
    v: &Value,
    path: &str,
    scalars: &mut Vec<(String, String)>,
    tables: &mut Vec<(String, Vec<Value>)>,
) {
    match v {
        Value::Object(map) => {
            for (k, val) in map {
                let sub = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                walk(val, &sub, scalars, tables);
            }
        }
        Value::Array(items) if !items.is_empty() && items.iter().all(Value::is_object) => {
            tables.push((path.to_string(), items.clone()));
        }
        Value::Array(items) => {
            for (i, item) in items.iter().enumerate() {
                walk(item, &format!("{path}[{i}]"), scalars, tables);
            }
        }
        _ => scalars.push((path.to_string(), render_scalar(v))),
    }
}

fn render_scalar(v: &Value) -> String {
    match v {
        Value::String(s) => csv_escape(s),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn csv_escape(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
