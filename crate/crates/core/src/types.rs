//! Value objects shared by every stage of a run.
//!
//! All of these are plain immutable data. They are cloned freely across
//! branch threads and assembled into a [`RunRecord`](crate::record::RunRecord)
//! by a single owner once the branches have joined.

use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A named input file made available to every candidate script.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataFile {
    pub name: String,
    pub path: PathBuf,
}

impl DataFile {
    pub fn new(name: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        Self { name: name.into(), path: path.into() }
    }
}

/// The user request and the dataset context it refers to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInput {
    pub task_id: String,
    pub query: String,
    pub dataset_description: String,
    #[serde(default)]
    pub data_files: Vec<DataFile>,
}

impl TaskInput {
    pub fn new(
        task_id: impl Into<String>,
        query: impl Into<String>,
        dataset_description: impl Into<String>,
    ) -> Self {
        Self {
            task_id: task_id.into(),
            query: query.into(),
            dataset_description: dataset_description.into(),
            data_files: Vec::new(),
        }
    }

    pub fn with_file(mut self, name: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        self.data_files.push(DataFile::new(name, path));
        self
    }

    /// Checks the run-start invariants: non-blank query, existing data files.
    pub fn validate(&self) -> Result<(), String> {
        if self.query.trim().is_empty() {
            return Err("query must not be empty".into());
        }
        for file in &self.data_files {
            if !file.path.exists() {
                return Err(format!(
                    "data file `{}` not found at {}",
                    file.name,
                    file.path.display()
                ));
            }
        }
        Ok(())
    }

    /// Dataset context as handed to the agents: the description followed by
    /// the names of the files that will sit in the script's working directory.
    pub fn dataset_context(&self) -> String {
        if self.data_files.is_empty() {
            return self.dataset_description.clone();
        }
        let names: Vec<&str> = self.data_files.iter().map(|f| f.name.as_str()).collect();
        format!(
            "{}\n\nFiles available in the working directory: {}",
            self.dataset_description.trim_end(),
            names.join(", ")
        )
    }
}

/// One structured interpretation of the request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningPath {
    /// 1-based, unique within a run.
    pub index: usize,
    pub plan_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chart_intent: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    MultiPath,
    ZeroShot,
    Cot,
    Synthesized,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::MultiPath => "multi_path",
            Origin::ZeroShot => "zero_shot",
            Origin::Cot => "cot",
            Origin::Synthesized => "synthesized",
        })
    }
}

/// A complete plotting script, fences already stripped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateScript {
    /// Index of the reasoning path this script came from; 0 for scripts that
    /// do not belong to a path (baselines, the synthesized program).
    pub path_index: usize,
    pub source: String,
    pub origin: Origin,
}

impl CandidateScript {
    pub fn new(path_index: usize, source: impl Into<String>, origin: Origin) -> Self {
        Self { path_index, source: source.into(), origin }
    }
}

/// A rendered figure. Only the relative path and digest are serialized;
/// the PNG bytes live next to the record in its figures directory.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Figure {
    /// Path relative to the run store, e.g. `figures/branch_1/fig_1.png`.
    pub path: String,
    pub sha256: String,
    #[serde(skip)]
    pub bytes: Arc<Vec<u8>>,
}

impl Figure {
    pub fn from_bytes(path: impl Into<String>, bytes: Vec<u8>) -> Self {
        let sha256 = hex::encode(Sha256::digest(&bytes));
        Self { path: path.into(), sha256, bytes: Arc::new(bytes) }
    }

    pub fn digest_matches(&self) -> bool {
        hex::encode(Sha256::digest(self.bytes.as_slice())) == self.sha256
    }
}

impl fmt::Debug for Figure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Figure")
            .field("path", &self.path)
            .field("sha256", &self.sha256)
            .field("len", &self.bytes.len())
            .finish()
    }
}

/// The routed result of executing one script: either figures or an error,
/// never both.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub ok: bool,
    #[serde(default)]
    pub figures: Vec<Figure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_text: Option<String>,
    pub wall_time_ms: u64,
    #[serde(default)]
    pub timed_out: bool,
}

impl ExecutionOutcome {
    /// Successful render. Panics on an empty figure list, which would
    /// otherwise produce an outcome violating the routing invariant.
    pub fn rendered(figures: Vec<Figure>, wall_time_ms: u64) -> Self {
        assert!(!figures.is_empty(), "a rendered outcome needs at least one figure");
        Self { ok: true, figures, error_text: None, wall_time_ms, timed_out: false }
    }

    pub fn failed(error_text: impl Into<String>, wall_time_ms: u64) -> Self {
        let mut error_text = error_text.into();
        if error_text.trim().is_empty() {
            error_text = "script failed without an error message".into();
        }
        Self { ok: false, figures: Vec::new(), error_text: Some(error_text), wall_time_ms, timed_out: false }
    }

    pub fn timed_out(error_text: impl Into<String>, wall_time_ms: u64) -> Self {
        Self { timed_out: true, ..Self::failed(error_text, wall_time_ms) }
    }

    /// `ok` XOR error text, `ok` iff figures, `timed_out` implies failure.
    pub fn is_consistent(&self) -> bool {
        let has_error = self.error_text.as_deref().is_some_and(|e| !e.is_empty());
        (self.ok ^ has_error)
            && (self.ok == !self.figures.is_empty())
            && (!self.timed_out || !self.ok)
    }

    pub fn first_figure(&self) -> Option<&Figure> {
        self.figures.first()
    }

    pub fn all_figures(&self) -> impl Iterator<Item = &Figure> {
        self.figures.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Usable,
    Fixable,
    Discard,
}

impl Verdict {
    pub fn parse(text: &str) -> Option<Self> {
        let word = text.trim().trim_matches(|c: char| !c.is_alphanumeric()).to_ascii_lowercase();
        match word.as_str() {
            "usable" => Some(Verdict::Usable),
            "fixable" => Some(Verdict::Fixable),
            "discard" => Some(Verdict::Discard),
            _ => None,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Usable => "usable",
            Verdict::Fixable => "fixable",
            Verdict::Discard => "discard",
        })
    }
}

/// Structured evaluation of one candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackReport {
    pub path_index: usize,
    pub semantic_alignment: String,
    pub data_correctness: String,
    pub visual_quality: String,
    pub verdict: Verdict,
    pub raw_text: String,
    /// False when the sections could not be located and the fields hold
    /// copies of the raw text.
    #[serde(default = "default_true")]
    pub structured: bool,
}

fn default_true() -> bool {
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn png() -> Vec<u8> {
        vec![0x89, b'P', b'N', b'G', 1, 2, 3]
    }

    #[test]
    fn outcome_constructors_hold_invariants() {
        let ok = ExecutionOutcome::rendered(vec![Figure::from_bytes("figures/a/fig_1.png", png())], 3);
        assert!(ok.is_consistent());
        let bad = ExecutionOutcome::failed("ValueError: x", 3);
        assert!(bad.is_consistent());
        assert!(!bad.ok);
        let slow = ExecutionOutcome::timed_out("timed out", 1000);
        assert!(slow.is_consistent() && slow.timed_out && !slow.ok);
    }

    #[test]
    fn empty_error_text_is_replaced() {
        let bad = ExecutionOutcome::failed("   ", 0);
        assert!(bad.is_consistent());
    }

    #[test]
    fn inconsistent_outcome_is_detected() {
        let mut o = ExecutionOutcome::failed("boom", 0);
        o.ok = true;
        assert!(!o.is_consistent());
        let mut o = ExecutionOutcome::rendered(vec![Figure::from_bytes("f.png", png())], 0);
        o.timed_out = true;
        assert!(!o.is_consistent());
    }

    #[test]
    fn task_input_rejects_blank_query_and_missing_files() {
        assert!(TaskInput::new("t", "  \n", "d").validate().is_err());
        let t = TaskInput::new("t", "plot", "d").with_file("x.csv", "/definitely/not/here.csv");
        assert!(t.validate().unwrap_err().contains("x.csv"));
    }

    #[test]
    fn dataset_context_lists_file_names() {
        let t = TaskInput::new("t", "plot", "sales by month").with_file("sales.csv", "/tmp/s.csv");
        let ctx = t.dataset_context();
        assert!(ctx.starts_with("sales by month"));
        assert!(ctx.contains("sales.csv"));
        assert!(!ctx.contains("/tmp/s.csv"));
    }

    #[test]
    fn verdict_parsing_is_lenient_about_punctuation() {
        assert_eq!(Verdict::parse(" **Usable**."), Some(Verdict::Usable));
        assert_eq!(Verdict::parse("DISCARD"), Some(Verdict::Discard));
        assert_eq!(Verdict::parse("maybe"), None);
    }

    #[test]
    fn figure_digest_tracks_bytes() {
        let mut f = Figure::from_bytes("f.png", png());
        assert!(f.digest_matches());
        f.bytes = Arc::new(vec![0]);
        assert!(!f.digest_matches());
    }
}
