//! The execution operator: run one script in a fresh scratch directory and
//! route the result into an [`ExecutionOutcome`].
//!
//! Success means the script finished *and* rendered at least one figure. A
//! script that exits cleanly without a figure is routed to the failure
//! branch with a synthetic message. Failed scripts are never retried.

mod process;
mod stub;
mod transport;

use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::types::{CandidateScript, DataFile, ExecutionOutcome, Figure};

pub use process::ProcessTransport;
pub use stub::{action_from_markers, StubAction, StubResult, StubTransport, STUB_PNG};
pub use transport::{decode_result, encode_job, RawResult, RunHandle, RunnerTransport, SandboxJob, TransportError};

pub const NO_FIGURE: &str = "no figure produced";
const ELLIPSIS: &str = "…";

#[derive(Debug, Error)]
pub enum ExecError {
    /// The runner itself could not be started; not a script failure.
    #[error("transport unavailable: {0}")]
    TransportUnavailable(String),
    #[error("could not prepare job directory: {0}")]
    Workspace(#[from] std::io::Error),
}

/// Per-execution settings.
#[derive(Debug, Clone)]
pub struct ExecRequest<'a> {
    pub data_files: &'a [DataFile],
    pub timeout: Duration,
    pub max_error_chars: usize,
    /// Names the figure subdirectory in the run store, e.g. `branch_2`.
    pub label: &'a str,
}

/// Keeps the last `limit` characters of `text`, prefixed by an ellipsis,
/// when it is longer than `limit`. Tracebacks end with the useful line.
pub fn truncate_error(text: &str, limit: usize) -> String {
    assert!(limit > 0, "limit must be positive");
    let count = text.chars().count();
    if count <= limit {
        return text.to_string();
    }
    let tail: String = text.chars().skip(count - limit).collect();
    format!("{ELLIPSIS}{tail}")
}

pub fn execute(script: &CandidateScript, request: &ExecRequest<'_>, transport: &dyn RunnerTransport) -> Result<ExecutionOutcome, ExecError> {
    let scratch = tempfile::Builder::new().prefix("plotsynth-job-").tempdir()?;
    let work_dir = scratch.path().to_path_buf();
    let figure_dir = work_dir.join("figures");
    fs::create_dir(&figure_dir)?;

    let mut data_files = Vec::with_capacity(request.data_files.len());
    for file in request.data_files {
        let target = work_dir.join(&file.name);
        fs::copy(&file.path, &target)?;
        data_files.push(DataFile::new(file.name.clone(), target));
    }

    let job = SandboxJob {
        script: script.source.clone(),
        data_files,
        figure_dir: figure_dir.clone(),
        work_dir,
        timeout: request.timeout,
    };

    let start = Instant::now();
    let mut handle = transport.launch(&job).map_err(|e| match e {
        TransportError::Unavailable(m) => ExecError::TransportUnavailable(m),
        TransportError::Io(e) => ExecError::TransportUnavailable(e.to_string()),
    })?;
    let raw = handle.wait(request.timeout);
    let elapsed = start.elapsed().as_millis() as u64;

    let outcome = match raw {
        None => {
            handle.kill();
            ExecutionOutcome::timed_out(
                format!("execution timed out after the {:.1}s limit", request.timeout.as_secs_f64()),
                elapsed,
            )
        }
        Some(RawResult::Error { traceback }) => {
            ExecutionOutcome::failed(truncate_error(&traceback, request.max_error_chars), elapsed)
        }
        Some(RawResult::Violation { raw }) => ExecutionOutcome::failed(
            truncate_error(&format!("runner protocol violation: {raw}"), request.max_error_chars),
            elapsed,
        ),
        Some(RawResult::Ok { figures }) => {
            let collected = collect_figures(&figure_dir, &figures, request.label);
            if collected.is_empty() {
                ExecutionOutcome::failed(NO_FIGURE, elapsed)
            } else {
                ExecutionOutcome::rendered(collected, elapsed)
            }
        }
    };
    drop(handle);
    // scratch is removed here; figures now live in memory
    drop(scratch);
    Ok(outcome)
}

/// Reads reported figures in order, skipping missing files and duplicate
/// canonical paths, and renames them under `figures/<label>/`.
fn collect_figures(figure_dir: &Path, reported: &[std::path::PathBuf], label: &str) -> Vec<Figure> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for path in reported {
        let full = if path.is_absolute() { path.clone() } else { figure_dir.join(path) };
        let Ok(canonical) = full.canonicalize() else {
            tracing::warn!(path = %full.display(), "runner reported a figure that does not exist");
            continue;
        };
        if !seen.insert(canonical.clone()) {
            continue;
        }
        match fs::read(&canonical) {
            Ok(bytes) if !bytes.is_empty() => {
                let name = format!("figures/{label}/fig_{}.png", out.len() + 1);
                out.push(Figure::from_bytes(name, bytes));
            }
            _ => tracing::warn!(path = %canonical.display(), "unreadable figure"),
        }
    }
    out
}
