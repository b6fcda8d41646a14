//! File formats: long-format pair data and assignments as CSV, study
//! configuration and reports as JSON.

mod config;
mod data;

pub use config::{DesignConfig, EffectEntry, StudyConfig};
pub use data::{
    assignment_csv_string, load_long_csv, long_csv_string, parse_assignment_csv, read_long_csv, write_long_csv,
    LongData,
};

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Pretty JSON with a trailing newline; field order follows the struct definitions.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Invalid(format!("json: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io { path: path.display().to_string(), source })
}
