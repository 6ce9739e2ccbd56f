//! Benchmark harness: suites, judge scoring, scorecards and K sweeps.
//!
//! Every item gets its own directory under the output root holding the
//! persisted run record and a `score.json`. The score file is written last
//! and marks the item as done, which is what resume relies on.

mod report;
mod score;
mod suite;
mod sweep;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{validate_config, ConfigViolation, PipelineConfig};
use crate::executor::RunnerTransport;
use crate::gateway::Gateway;
use crate::pipeline::{Pipeline, RunError};
use crate::prompts::PromptSet;
use crate::record::{load_run, persist_run, RunRecord};

pub use report::{executable_rate, markdown_table, ItemScore, Scorecard};
pub use score::{parse_score, parse_yes_no, Judge, ScoreError, CORRECTNESS_QUESTION};
pub use suite::{load_suite, BenchItem, SuiteError, Subset};
pub use sweep::{sweep_csv, sweep_svg, SweepRow};

pub const SCORE_FILE: &str = "score.json";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid configuration: {}", .0.iter().map(|v| v.message.as_str()).collect::<Vec<_>>().join("; "))]
    InvalidConfig(Vec<ConfigViolation>),
    #[error("k values must lie in 1..=8, got {0}")]
    InvalidK(i64),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), BenchError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| BenchError::Io { path: parent.to_path_buf(), source })?;
    }
    fs::write(path, contents).map_err(|source| BenchError::Io { path: path.to_path_buf(), source })
}

/// Directory name for an item id. Ids that are not already safe get a short
/// digest suffix so two ids never share a directory.
pub fn item_dir_name(id: &str) -> String {
    let safe: String = id.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect();
    if safe == id && !id.starts_with('.') {
        safe
    } else {
        format!("{}-{}", safe.trim_start_matches('.'), &hex::encode(Sha256::digest(id.as_bytes()))[..8])
    }
}

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub out_dir: PathBuf,
    /// Items run concurrently.
    pub parallelism: usize,
    /// Skip items whose record and score are already stored for this config.
    pub resume: bool,
}

impl SuiteOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self { out_dir: out_dir.into(), parallelism: 1, resume: false }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub scorecard: Scorecard,
    pub executed: usize,
    pub resumed: usize,
}

pub struct Harness<'a> {
    gateway: &'a Gateway,
    transport: &'a dyn RunnerTransport,
    prompts: &'a PromptSet,
}

enum ItemResult {
    Fresh(ItemScore),
    Resumed(ItemScore),
}

impl<'a> Harness<'a> {
    pub fn new(gateway: &'a Gateway, transport: &'a dyn RunnerTransport, prompts: &'a PromptSet) -> Self {
        Self { gateway, transport, prompts }
    }

    /// Runs every item, persists records and scores, and writes
    /// `scorecard.csv`, `scorecard.md` and `scorecard.json` to the output
    /// directory. Item failures are recorded, never fatal.
    pub fn run_suite(&self, items: &[BenchItem], config: &PipelineConfig, opts: &SuiteOptions) -> Result<SuiteReport, BenchError> {
        let config = validate_config(config.clone()).map_err(BenchError::InvalidConfig)?;
        fs::create_dir_all(&opts.out_dir).map_err(|source| BenchError::Io { path: opts.out_dir.clone(), source })?;

        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<ItemResult, BenchError>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
        thread::scope(|scope| {
            for _ in 0..opts.parallelism.clamp(1, items.len().max(1)) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(item) = items.get(i) else { break };
                    let result = self.run_item(item, &config, opts);
                    slots.lock().expect("item slots")[i] = Some(result);
                });
            }
        });

        let mut scores = Vec::with_capacity(items.len());
        let (mut executed, mut resumed) = (0, 0);
        for slot in slots.into_inner().expect("item slots") {
            match slot.expect("every item reports")? {
                ItemResult::Fresh(s) => {
                    executed += 1;
                    scores.push(s);
                }
                ItemResult::Resumed(s) => {
                    resumed += 1;
                    scores.push(s);
                }
            }
        }

        let scorecard = Scorecard { strategy: config.mode, k: config.k, model: scoring_model(&config), items: scores };
        write(&opts.out_dir.join("scorecard.csv"), scorecard.to_csv())?;
        write(&opts.out_dir.join("scorecard.md"), markdown_table(std::slice::from_ref(&scorecard)))?;
        write(&opts.out_dir.join("scorecard.json"), serde_json::to_vec_pretty(&scorecard).expect("scorecard serializes"))?;
        tracing::info!(items = items.len(), executed, resumed, rate = scorecard.executable_rate(), "suite finished");
        Ok(SuiteReport { scorecard, executed, resumed })
    }

    fn resume(dir: &Path, config: &PipelineConfig) -> Option<ItemScore> {
        let score: ItemScore = serde_json::from_slice(&fs::read(dir.join(SCORE_FILE)).ok()?).ok()?;
        let record = load_run(dir).ok()?;
        (record.config == *config).then_some(score)
    }

    fn run_item(&self, item: &BenchItem, config: &PipelineConfig, opts: &SuiteOptions) -> Result<ItemResult, BenchError> {
        let dir = opts.out_dir.join(item_dir_name(&item.id));
        if opts.resume {
            if let Some(score) = Self::resume(&dir, config) {
                tracing::debug!(item = %item.id, "resumed");
                return Ok(ItemResult::Resumed(score));
            }
        }
        // stale artifacts from an earlier, different run must not survive
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|source| BenchError::Io { path: dir.clone(), source })?;
        }

        let pipeline = Pipeline::new(self.gateway, self.transport, self.prompts);
        let (record, mut failure) = match pipeline.run(&item.task_input(), config) {
            Ok(r) => (Some(r), None),
            Err(RunError::Aborted { reason, partial }) => (Some(*partial), Some(reason)),
            Err(e) => (None, Some(e.to_string())),
        };
        if let Some(r) = &record {
            if let Err(e) = persist_run(r, &dir) {
                tracing::warn!(item = %item.id, error = %e, "could not persist run");
                failure.get_or_insert(e.to_string());
            }
        }

        let mut score = ItemScore {
            item_id: item.id.clone(),
            subset: item.subset,
            executable: record.as_ref().is_some_and(RunRecord::executable),
            plot_score: None,
            correct: None,
            ledger: record.as_ref().map(|r| r.ledger).unwrap_or_default(),
            failure,
            score_error: None,
        };
        self.judge_item(item, record.as_ref(), config, &mut score);
        write(&dir.join(SCORE_FILE), serde_json::to_vec_pretty(&score).expect("score serializes"))?;
        Ok(ItemResult::Fresh(score))
    }

    fn judge_item(&self, item: &BenchItem, record: Option<&RunRecord>, config: &PipelineConfig, score: &mut ItemScore) {
        let judge = Judge::new(self.gateway, self.prompts, config);
        let figure = record.and_then(|r| r.final_outcome.as_ref()).and_then(|o| o.first_figure()).map(|f| f.bytes.clone());
        let reference = match item.gt_image.as_deref().map(fs::read).transpose() {
            Ok(r) => r.map(Arc::new),
            Err(e) => {
                score.score_error = Some(format!("cannot read reference image: {e}"));
                None
            }
        };
        let mut sink = Vec::new();

        match (&figure, &reference) {
            (Some(fig), Some(gt)) => match judge.score_plot(fig, gt, &item.query, &mut sink) {
                Ok(s) => score.plot_score = Some(f64::from(s)),
                Err(e) => {
                    tracing::warn!(item = %item.id, error = %e, "plot scoring failed; item left out of the mean");
                    score.score_error = Some(e.to_string());
                }
            },
            // a program that renders nothing scores zero against its reference
            (None, Some(_)) => score.plot_score = Some(0.0),
            _ => {}
        }

        if item.subset.is_some() {
            score.correct = match &figure {
                Some(fig) => match judge.judge_correct(fig, reference.as_ref(), &item.query, &mut sink) {
                    Ok(c) => Some(c),
                    Err(e) => {
                        tracing::warn!(item = %item.id, error = %e, "correctness judging failed");
                        None
                    }
                },
                None => Some(false),
            };
        }
    }

    /// One suite run per k, each in `k_<k>/` under the output directory,
    /// plus `sweep.csv` and a `sweep.svg` comparison chart.
    pub fn k_sweep(&self, items: &[BenchItem], k_values: &[i64], config: &PipelineConfig, opts: &SuiteOptions) -> Result<Vec<Scorecard>, BenchError> {
        if let Some(&bad) = k_values.iter().find(|k| !(1..=8).contains(*k)) {
            return Err(BenchError::InvalidK(bad));
        }
        let mut cards = Vec::with_capacity(k_values.len());
        for &k in k_values {
            let sub = SuiteOptions { out_dir: opts.out_dir.join(format!("k_{k}")), ..opts.clone() };
            cards.push(self.run_suite(items, &config.clone().with_k(k), &sub)?.scorecard);
        }
        let rows: Vec<SweepRow> = cards.iter().map(SweepRow::from).collect();
        write(&opts.out_dir.join("sweep.csv"), sweep_csv(&rows))?;
        write(&opts.out_dir.join("sweep.md"), markdown_table(&cards))?;
        write(&opts.out_dir.join("sweep.svg"), sweep_svg(&rows))?;
        Ok(cards)
    }
}

fn scoring_model(config: &PipelineConfig) -> String {
    if config.mode.is_baseline() {
        config.models.baseline.clone()
    } else {
        config.models.code.clone()
    }
}
