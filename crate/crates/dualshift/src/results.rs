//! JSON result documents.

use std::path::Path;

use dualshift_core::trainer::{Row, SCHEMA_VERSION};
use dualshift_core::RunResult;
use serde::{Deserialize, Serialize};

use crate::{io_err, json_err, write_file, Error, Result};

/// A results table (ablation or sweep) as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableDoc {
    pub schema_version: u32,
    pub kind: String,
    pub rows: Vec<TableRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub result: RunResult,
}

impl TableDoc {
    pub fn new(kind: &str, rows: Vec<Row>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind: kind.to_string(),
            rows: rows
                .into_iter()
                .map(|r| TableRow {
                    label: r.label,
                    result: r.result,
                })
                .collect(),
        }
    }
}

fn check_schema(path: &Path, found: u32) -> Result<()> {
    if found != SCHEMA_VERSION {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            found,
            expected: SCHEMA_VERSION,
        });
    }
    Ok(())
}

fn check_result(path: &Path, result: &RunResult) -> Result<()> {
    check_schema(path, result.schema_version)?;
    result.verify_summary().map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Serializes after checking that mean and std match the per-fold list.
pub fn save_result(path: &Path, result: &RunResult) -> Result<()> {
    check_result(path, result)?;
    write_file(
        path,
        serde_json::to_string_pretty(result).map_err(json_err(path))?,
    )
}

pub fn load_result(path: &Path) -> Result<RunResult> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let result: RunResult = serde_json::from_str(&text).map_err(json_err(path))?;
    check_result(path, &result)?;
    Ok(result)
}

pub fn save_table(path: &Path, table: &TableDoc) -> Result<()> {
    for row in &table.rows {
        check_result(path, &row.result)?;
    }
    write_file(path, serde_json::to_string_pretty(table).map_err(json_err(path))?)
}

/// Loads either a single result or a table, returning labelled results.
/// A single result is labelled with the file stem.
pub fn load_any(path: &Path) -> Result<Vec<TableRow>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(json_err(path))?;
    let found = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            message: "missing schema_version".into(),
        })?;
    check_schema(path, u32::try_from(found).unwrap_or(u32::MAX))?;
    if value.get("rows").is_some() {
        let table: TableDoc = serde_json::from_value(value).map_err(json_err(path))?;
        for row in &table.rows {
            check_result(path, &row.result)?;
        }
        Ok(table.rows)
    } else {
        let result: RunResult = serde_json::from_value(value).map_err(json_err(path))?;
        check_result(path, &result)?;
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(vec![TableRow { label, result }])
    }
}
