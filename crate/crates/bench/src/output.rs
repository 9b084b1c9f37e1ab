//! CSV and JSON writers. Headers are written explicitly so that an empty
//! result still produces a well-formed file.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

pub fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Run metadata written next to every output.
#[derive(Debug, Clone, Serialize)]
pub struct RunInfo<'a> {
    pub command: &'a str,
    pub name: &'a str,
    pub seed: u64,
    pub config_hash: String,
    pub version: &'a str,
}
