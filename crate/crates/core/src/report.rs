//! CSV and JSON emitters shared by the CLI and the acceptance suite.
//!
//! Output is deterministic: floats use Rust's shortest round-trip form,
//! rows keep insertion order and JSON objects keep field order. Every CSV
//! starts with a `# schema_version: N` line; every JSON summary carries a
//! top-level `schema_version` field.

use serde::Serialize;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::estimators::BatteryReport;

pub const SCHEMA_VERSION: u32 = 1;

/// Deterministic float formatting.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x}")
    }
}

/// A named table of string cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self { name: name.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::InvalidArgument(format!(
                "table {}: row has {} cells, header has {}",
                self.name,
                row.len(),
                self.header.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        let body = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let body = String::from_utf8(body).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(format!("# schema_version: {SCHEMA_VERSION}\n{body}"))
    }

    /// Writes `<dir>/<name>.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join(format!("{}.csv", self.name)), &self.to_csv()?)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(e.to_string())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

/// Pretty JSON with `schema_version` inserted first.
pub fn summary_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut map = serde_json::Map::new();
    map.insert("schema_version".into(), SCHEMA_VERSION.into());
    match v {
        serde_json::Value::Object(o) => map.extend(o),
        other => {
            map.insert("value".into(), other);
        }
    }
    let mut s = serde_json::to_string_pretty(&serde_json::Value::Object(map))
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Writes `<dir>/<name>.json`.
pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    write_file(&dir.join(format!("{name}.json")), &summary_json(value)?)
}

/// One row per statistic of each battery.
pub fn battery_table(name: &str, reports: &[BatteryReport]) -> Result<Table> {
    let mut t = Table::new(name, &["battery", "statistic", "estimate", "se", "z", "verdict"]);
    for r in reports {
        for row in &r.rows {
            t.push(vec![
                row.battery.clone(),
                row.statistic.clone(),
                fmt_num(row.estimate),
                fmt_num(row.se),
                fmt_num(row.z),
                row.verdict.as_str().into(),
            ])?;
        }
    }
    Ok(t)
}
