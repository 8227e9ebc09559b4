//! Line-oriented readers and writers for the record files.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: invalid record: {message}")]
    Invalid { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl RecordError {
    pub fn line(&self) -> Option<usize> {
        match self {
            RecordError::Parse { line, .. } | RecordError::Invalid { line, .. } => Some(*line),
            _ => None,
        }
    }
}

/// Reads one JSON value per non-blank line, validating each with `check`.
pub fn read_jsonl<T, R, F>(reader: R, mut check: F) -> Result<Vec<T>, RecordError>
where
    T: DeserializeOwned,
    R: BufRead,
    F: FnMut(&T) -> Result<(), String>,
{
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: T = serde_json::from_str(&line).map_err(|e| RecordError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        check(&value).map_err(|message| RecordError::Invalid { line: lineno, message })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(mut w: W, items: &[T]) -> Result<(), RecordError> {
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| RecordError::Parse {
            line: 0,
            message: e.to_string(),
        })?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Parses a yes/no cell. Accepts `yes`/`no`, `y`/`n`, `true`/`false`, `1`/`0`.
pub fn parse_yes_no(cell: &str) -> Result<bool, String> {
    match cell.trim().to_ascii_lowercase().as_str() {
        "yes" | "y" | "true" | "1" => Ok(true),
        "no" | "n" | "false" | "0" => Ok(false),
        other => Err(format!("expected yes/no, got `{other}`")),
    }
}

pub fn yes_no(v: bool) -> &'static str {
    if v {
        "yes"
    } else {
        "no"
    }
}

/// Empty cell → `None`.
pub fn optional_cell(cell: &str) -> Option<&str> {
    let t = cell.trim();
    (!t.is_empty()).then_some(t)
}

/// Rounds to a fixed number of decimals so text output is stable and compact.
pub fn round_to(v: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    (v * scale).round() / scale
}
