use std::path::PathBuf;
use std::time::Duration;

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::types::DataFile;

/// Everything a runner needs for one script.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SandboxJob {
    pub script: String,
    /// Copies of the task's files inside `work_dir`.
    pub data_files: Vec<DataFile>,
    /// Empty when the job starts.
    pub figure_dir: PathBuf,
    /// Private scratch directory; the runner's working directory.
    pub work_dir: PathBuf,
    pub timeout: Duration,
}

/// What the runner reported, before routing into an outcome.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RawResult {
    Ok { figures: Vec<PathBuf> },
    Error { traceback: String },
    /// stdout did not hold exactly one protocol object.
    Violation { raw: String },
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("runner unavailable: {0}")]
    Unavailable(String),
    #[error("runner i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Launches jobs and hands back a handle to wait on. Implementations must
/// support at least as many concurrent jobs as there are branches.
pub trait RunnerTransport: Send + Sync {
    fn launch(&self, job: &SandboxJob) -> Result<Box<dyn RunHandle>, TransportError>;
}

pub trait RunHandle: Send {
    /// Blocks for at most `timeout`; `None` means the job is still running.
    /// Yields at most one result per job.
    fn wait(&mut self, timeout: Duration) -> Option<RawResult>;

    /// Stops the job. Called after a timeout.
    fn kill(&mut self);
}

#[derive(Serialize)]
struct WireFile<'a> {
    name: &'a str,
    path: String,
}

#[derive(Serialize)]
struct WireJob<'a> {
    script: &'a str,
    data_files: Vec<WireFile<'a>>,
    figure_dir: String,
}

/// The single JSON object written to the runner's stdin.
pub fn encode_job(job: &SandboxJob) -> String {
    let wire = WireJob {
        script: &job.script,
        data_files: job
            .data_files
            .iter()
            .map(|f| WireFile { name: &f.name, path: f.path.display().to_string() })
            .collect(),
        figure_dir: job.figure_dir.display().to_string(),
    };
    serde_json::to_string(&wire).expect("job serializes")
}

/// Parses runner stdout. Exactly one JSON object with exactly the protocol
/// keys is accepted; anything else is a violation carrying the raw text.
pub fn decode_result(stdout: &[u8]) -> RawResult {
    let raw = String::from_utf8_lossy(stdout).into_owned();
    let violation = || RawResult::Violation { raw: raw.clone() };

    let mut stream = serde_json::Deserializer::from_slice(stdout).into_iter::<Value>();
    let value = match stream.next() {
        Some(Ok(v)) => v,
        _ => return violation(),
    };
    if stream.next().is_some() {
        return violation();
    }
    let Value::Object(obj) = value else { return violation() };
    match (obj.get("status").and_then(Value::as_str), obj.len()) {
        (Some("ok"), 2) => match obj.get("figures").and_then(Value::as_array) {
            Some(items) => {
                let figures: Option<Vec<PathBuf>> = items.iter().map(|f| f.as_str().map(PathBuf::from)).collect();
                figures.map_or_else(violation, |figures| RawResult::Ok { figures })
            }
            None => violation(),
        },
        (Some("error"), 2) => match obj.get("traceback").and_then(Value::as_str) {
            Some(tb) => RawResult::Error { traceback: tb.to_string() },
            None => violation(),
        },
        _ => violation(),
    }
}
