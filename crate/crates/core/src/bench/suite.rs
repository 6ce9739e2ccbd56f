use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{DataFile, TaskInput};

/// Difficulty split used for the correctness columns of the report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Easy,
    Hard,
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subset::Easy => "easy",
            Subset::Hard => "hard",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchItem {
    pub id: String,
    pub query: String,
    pub dataset_description: String,
    pub data_files: Vec<DataFile>,
    pub gt_image: Option<PathBuf>,
    pub subset: Option<Subset>,
}

impl BenchItem {
    pub fn task_input(&self) -> TaskInput {
        TaskInput {
            task_id: self.id.clone(),
            query: self.query.clone(),
            dataset_description: self.dataset_description.clone(),
            data_files: self.data_files.clone(),
        }
    }
}

#[derive(Deserialize)]
struct WireFile {
    name: String,
    path: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireItem {
    id: String,
    query: String,
    #[serde(default)]
    dataset_description: String,
    #[serde(default)]
    data_files: Vec<WireFile>,
    #[serde(default)]
    gt_image: Option<PathBuf>,
    #[serde(default)]
    subset: Option<Subset>,
}

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("cannot read suite {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate item id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: referenced file not found: {path}")]
    MissingFile { line: usize, path: PathBuf },
}

/// Reads a JSON-lines suite. Relative paths resolve against the suite
/// file's directory; blank lines are skipped.
pub fn load_suite(path: &Path) -> Result<Vec<BenchItem>, SuiteError> {
    let text = fs::read_to_string(path).map_err(|source| SuiteError::Io { path: path.to_path_buf(), source })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut seen = HashSet::new();
    let mut items = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let wire: WireItem = serde_json::from_str(raw).map_err(|e| SuiteError::Parse { line, message: e.to_string() })?;
        if wire.id.trim().is_empty() {
            return Err(SuiteError::Parse { line, message: "item id must not be empty".into() });
        }
        if wire.query.trim().is_empty() {
            return Err(SuiteError::Parse { line, message: format!("item `{}` has an empty query", wire.id) });
        }
        if !seen.insert(wire.id.clone()) {
            return Err(SuiteError::DuplicateId { line, id: wire.id });
        }
        let resolve = |p: &Path| -> Result<PathBuf, SuiteError> {
            let full = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
            if full.is_file() {
                Ok(full)
            } else {
                Err(SuiteError::MissingFile { line, path: full })
            }
        };
        let mut data_files = Vec::with_capacity(wire.data_files.len());
        for f in &wire.data_files {
            data_files.push(DataFile::new(f.name.clone(), resolve(&f.path)?));
        }
        let gt_image = wire.gt_image.as_deref().map(resolve).transpose()?;
        items.push(BenchItem {
            id: wire.id,
            query: wire.query,
            dataset_description: wire.dataset_description,
            data_files,
            gt_image,
            subset: wire.subset,
        });
    }
    Ok(items)
}
