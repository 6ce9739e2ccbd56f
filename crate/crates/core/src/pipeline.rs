//! End-to-end orchestration of one run.
//!
//! Multi-path modes: expand into k plans, run k independent branches
//! (generate, execute, review), synthesize one program, execute it once
//! more. Baseline modes: one generation and one execution.
//!
//! The ledger counts successful stage completions only. Reprompts and
//! fallbacks show up in the transcript, not the ledger.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use chrono::Utc;
use thiserror::Error;

use crate::agents::{Agents, FeedbackMode};
use crate::config::{validate_config, ConfigViolation, PipelineConfig, PipelineMode};
use crate::executor::{self, ExecError, ExecRequest, RunnerTransport};
use crate::gateway::{Gateway, TranscriptEntry};
use crate::prompts::PromptSet;
use crate::record::RunRecord;
use crate::types::{CandidateScript, ExecutionOutcome, FeedbackReport, Origin, ReasoningPath, TaskInput, Verdict};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration: {}", join(.0))]
    InvalidConfig(Vec<ConfigViolation>),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A fatal stage failure. The partial record carries a failure marker.
    #[error("run aborted: {reason}")]
    Aborted { reason: String, partial: Box<RunRecord> },
}

fn join(violations: &[ConfigViolation]) -> String {
    violations.iter().map(|v| v.message.as_str()).collect::<Vec<_>>().join("; ")
}

impl RunError {
    pub fn partial(&self) -> Option<&RunRecord> {
        match self {
            RunError::Aborted { partial, .. } => Some(partial),
            _ => None,
        }
    }
}

/// The outputs of one branch, in the slots they occupy in the record.
#[derive(Debug, Clone)]
pub struct BranchResult {
    pub candidate: CandidateScript,
    pub outcome: ExecutionOutcome,
    pub feedback: Option<FeedbackReport>,
    pub transcript: Vec<TranscriptEntry>,
    pub generated: bool,
    pub reviewed: bool,
    /// Set when the runner itself was unusable; aborts the run.
    pub fatal: Option<String>,
}

pub struct Pipeline<'a> {
    gateway: &'a Gateway,
    transport: &'a dyn RunnerTransport,
    prompts: &'a PromptSet,
}

impl<'a> Pipeline<'a> {
    pub fn new(gateway: &'a Gateway, transport: &'a dyn RunnerTransport, prompts: &'a PromptSet) -> Self {
        Self { gateway, transport, prompts }
    }

    pub fn run(&self, input: &TaskInput, config: &PipelineConfig) -> Result<RunRecord, RunError> {
        let config = validate_config(config.clone()).map_err(RunError::InvalidConfig)?;
        input.validate().map_err(RunError::InvalidInput)?;

        let started = Instant::now();
        let deadline = started + config.run_budget();
        let mut record = RunRecord::new(input.clone(), config.clone());
        tracing::info!(task = %input.task_id, mode = config.mode.as_str(), k = config.k, "run started");

        let result = if config.mode.is_baseline() {
            self.run_baseline(input, &config, deadline, &mut record)
        } else {
            self.run_multi_path(input, &config, deadline, &mut record)
        };

        record.timings.total_ms = started.elapsed().as_millis() as u64;
        record.finished_at = Utc::now();
        match result {
            Ok(()) => Ok(record),
            Err(reason) => {
                tracing::warn!(task = %input.task_id, %reason, "run aborted");
                record.failure = Some(reason.clone());
                Err(RunError::Aborted { reason, partial: Box::new(record) })
            }
        }
    }

    fn execute(&self, script: &CandidateScript, config: &PipelineConfig, label: &str, input: &TaskInput, deadline: Instant) -> Result<ExecutionOutcome, String> {
        let remaining = deadline.saturating_duration_since(Instant::now());
        let request = ExecRequest {
            data_files: &input.data_files,
            timeout: config.exec_timeout().min(remaining.max(Duration::from_millis(1))),
            max_error_chars: config.error_limit(),
            label,
        };
        executor::execute(script, &request, self.transport).map_err(|e| match e {
            ExecError::TransportUnavailable(m) => format!("sandbox transport unavailable: {m}"),
            ExecError::Workspace(e) => format!("could not prepare sandbox directory: {e}"),
        })
    }

    fn run_baseline(&self, input: &TaskInput, config: &PipelineConfig, deadline: Instant, record: &mut RunRecord) -> Result<(), String> {
        let agents = Agents::new(self.gateway, self.prompts, config);
        let dataset = input.dataset_context();
        let t = Instant::now();
        let generated = match config.mode {
            PipelineMode::Cot => agents.cot_generate(&input.query, &dataset, &mut record.transcripts),
            _ => agents.zero_shot_generate(&input.query, &dataset, &mut record.transcripts),
        };
        record.timings.branches_ms = t.elapsed().as_millis() as u64;
        let script = generated.map_err(|e| format!("baseline generation failed: {e}"))?;
        record.ledger.code_generation = 1;
        check_budget(deadline, config)?;

        let t = Instant::now();
        let outcome = self.execute(&script, config, "final", input, deadline)?;
        record.timings.final_execution_ms = t.elapsed().as_millis() as u64;
        record.candidates.push(script.clone());
        record.outcomes.push(outcome.clone());
        record.final_script = Some(script);
        record.final_outcome = Some(outcome);
        Ok(())
    }

    fn run_multi_path(&self, input: &TaskInput, config: &PipelineConfig, deadline: Instant, record: &mut RunRecord) -> Result<(), String> {
        let agents = Agents::new(self.gateway, self.prompts, config);
        let dataset = input.dataset_context();
        let k = config.branches();

        let t = Instant::now();
        let paths = agents
            .expand_paths(input, k, &mut record.transcripts)
            .map_err(|e| format!("path expansion failed: {e}"))?;
        record.timings.expansion_ms = t.elapsed().as_millis() as u64;
        record.ledger.query_expansion = 1;
        record.paths = paths.clone();
        check_budget(deadline, config)?;

        let t = Instant::now();
        let branches = self.run_branches(input, &paths, config, deadline);
        record.timings.branches_ms = t.elapsed().as_millis() as u64;
        let mut fatal = None;
        for branch in branches {
            record.ledger.code_generation += branch.generated as u64;
            record.ledger.visual_feedback += branch.reviewed as u64;
            record.transcripts.extend(branch.transcript);
            record.candidates.push(branch.candidate);
            record.outcomes.push(branch.outcome);
            record.feedback.extend(branch.feedback);
            fatal = fatal.or(branch.fatal);
        }
        if let Some(reason) = fatal {
            return Err(reason);
        }
        check_budget(deadline, config)?;

        let t = Instant::now();
        let pairs: Vec<(CandidateScript, Option<FeedbackReport>)> = record
            .candidates
            .iter()
            .map(|c| (c.clone(), record.feedback.iter().find(|f| f.path_index == c.path_index).cloned()))
            .collect();
        let final_script = agents
            .synthesize(&input.query, &dataset, &pairs, &mut record.transcripts)
            .map_err(|e| format!("synthesis failed: {e}"))?;
        record.timings.synthesis_ms = t.elapsed().as_millis() as u64;
        record.ledger.editor = 1;
        record.final_script = Some(final_script.clone());
        check_budget(deadline, config)?;

        let t = Instant::now();
        let outcome = self.execute(&final_script, config, "final", input, deadline)?;
        record.timings.final_execution_ms = t.elapsed().as_millis() as u64;
        record.final_outcome = Some(outcome);
        Ok(())
    }

    /// Runs one branch per path, at most `config.branch_parallelism()` at a
    /// time. Results come back in path order whatever the completion order.
    pub fn run_branches(&self, input: &TaskInput, paths: &[ReasoningPath], config: &PipelineConfig, deadline: Instant) -> Vec<BranchResult> {
        let workers = config.branch_parallelism().min(paths.len()).max(1);
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<BranchResult>>> = Mutex::new(vec![None; paths.len()]);

        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(path) = paths.get(i) else { break };
                    let result = self.run_branch(input, path, config, deadline);
                    slots.lock().expect("branch slots")[i] = Some(result);
                });
            }
        });

        slots.into_inner().expect("branch slots").into_iter().map(|r| r.expect("every branch reports")).collect()
    }

    fn run_branch(&self, input: &TaskInput, path: &ReasoningPath, config: &PipelineConfig, deadline: Instant) -> BranchResult {
        let agents = Agents::new(self.gateway, self.prompts, config);
        let mut transcript = Vec::new();
        let label = format!("branch_{}", path.index);
        let feedback_mode = FeedbackMode::for_pipeline(config.mode);

        let generated = agents.generate_code(&input.dataset_context(), path, config.gen_temperature, &mut transcript);
        let (candidate, outcome, generated, fatal) = match generated {
            Ok(candidate) => match self.execute(&candidate, config, &label, input, deadline) {
                Ok(outcome) => (candidate, outcome, true, None),
                Err(reason) => {
                    let outcome = ExecutionOutcome::failed(reason.clone(), 0);
                    (candidate, outcome, true, Some(reason))
                }
            },
            Err(e) => {
                tracing::warn!(path = path.index, error = %e, "code generation failed");
                let candidate = CandidateScript::new(path.index, format!("# code generation failed: {e}"), Origin::MultiPath);
                (candidate, ExecutionOutcome::failed(format!("code generation failed: {e}"), 0), false, None)
            }
        };

        let mut reviewed = false;
        let feedback = feedback_mode.map(|mode| {
            if !generated || fatal.is_some() {
                return fallback_report(path.index, outcome.error_text.as_deref().unwrap_or("no candidate"));
            }
            match agents.evaluate_candidate(&input.query, &candidate, &outcome, mode, &mut transcript) {
                Ok(report) => {
                    reviewed = true;
                    report
                }
                Err(e) => {
                    tracing::warn!(path = path.index, error = %e, "feedback failed");
                    fallback_report(path.index, &format!("feedback unavailable: {e}"))
                }
            }
        });

        BranchResult { candidate, outcome, feedback, transcript, generated, reviewed, fatal }
    }
}

fn check_budget(deadline: Instant, config: &PipelineConfig) -> Result<(), String> {
    if Instant::now() >= deadline {
        Err(format!("run budget of {}s exhausted", config.run_budget))
    } else {
        Ok(())
    }
}

/// Stands in for a review that could not be obtained.
fn fallback_report(path_index: usize, reason: &str) -> FeedbackReport {
    FeedbackReport {
        path_index,
        semantic_alignment: reason.to_string(),
        data_correctness: reason.to_string(),
        visual_quality: reason.to_string(),
        verdict: Verdict::Discard,
        raw_text: reason.to_string(),
        structured: false,
    }
}
