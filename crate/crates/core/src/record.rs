//! Run records and their on-disk store.
//!
//! A stored run is a directory holding `record.json` and a `figures/` tree.
//! The JSON envelope carries a schema tag and a content hash computed over
//! the structural form of the record, which leaves out timestamps and
//! timings so that replayed runs hash identically.

use std::fs;
use std::io::Write;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::gateway::TranscriptEntry;
use crate::ledger::StageLedger;
use crate::types::{CandidateScript, ExecutionOutcome, FeedbackReport, Figure, ReasoningPath, TaskInput};

pub const SCHEMA: &str = "plotsynth-run/1";
pub const RECORD_FILE: &str = "record.json";

/// Wall-clock milliseconds per pipeline stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTimings {
    pub expansion_ms: u64,
    pub branches_ms: u64,
    pub synthesis_ms: u64,
    pub final_execution_ms: u64,
    pub total_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub input: TaskInput,
    pub config: PipelineConfig,
    pub paths: Vec<ReasoningPath>,
    pub candidates: Vec<CandidateScript>,
    pub outcomes: Vec<ExecutionOutcome>,
    pub feedback: Vec<FeedbackReport>,
    #[serde(rename = "final")]
    pub final_script: Option<CandidateScript>,
    pub final_outcome: Option<ExecutionOutcome>,
    pub ledger: StageLedger,
    pub transcripts: Vec<TranscriptEntry>,
    pub timings: StageTimings,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    /// Set when the run aborted; the record is then partial.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl RunRecord {
    pub fn new(input: TaskInput, config: PipelineConfig) -> Self {
        let now = Utc::now();
        Self {
            input,
            config,
            paths: Vec::new(),
            candidates: Vec::new(),
            outcomes: Vec::new(),
            feedback: Vec::new(),
            final_script: None,
            final_outcome: None,
            ledger: StageLedger::default(),
            transcripts: Vec::new(),
            timings: StageTimings::default(),
            started_at: now,
            finished_at: now,
            failure: None,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.failure.is_none() && self.final_outcome.is_some()
    }

    /// True when the final program ran and rendered a figure.
    pub fn executable(&self) -> bool {
        self.final_outcome.as_ref().is_some_and(|o| o.ok)
    }

    pub fn reprompts(&self) -> usize {
        self.transcripts.iter().filter(|t| t.reprompt).count()
    }

    /// Every figure in the record: branch outcomes first, then the final one.
    pub fn figures(&self) -> impl Iterator<Item = &Figure> {
        self.outcomes.iter().chain(self.final_outcome.iter()).flat_map(|o| o.figures.iter())
    }

    fn figures_mut(&mut self) -> impl Iterator<Item = &mut Figure> {
        self.outcomes.iter_mut().chain(self.final_outcome.iter_mut()).flat_map(|o| o.figures.iter_mut())
    }

    /// The record as JSON with timestamps, stage timings and execution wall
    /// times removed.
    pub fn structural(&self) -> Value {
        let mut value = serde_json::to_value(self).expect("record serializes");
        if let Value::Object(map) = &mut value {
            map.remove("started_at");
            map.remove("finished_at");
            map.remove("timings");
        }
        strip_wall_times(&mut value);
        value
    }

    pub fn structurally_eq(&self, other: &RunRecord) -> bool {
        self.structural() == other.structural()
    }

    /// Hex sha256 of the canonical structural JSON (keys sorted).
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_string(&self.structural()).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

fn strip_wall_times(value: &mut Value) {
    match value {
        Value::Object(map) => {
            map.remove("wall_time_ms");
            map.values_mut().for_each(strip_wall_times);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_wall_times),
        _ => {}
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("run store unavailable at {path}: {source}")]
    Unavailable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt run record at {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
}

#[derive(Serialize)]
struct EnvelopeOut<'a> {
    schema: &'static str,
    content_hash: String,
    record: &'a RunRecord,
}

#[derive(Deserialize)]
struct EnvelopeIn {
    schema: String,
    content_hash: String,
    record: RunRecord,
}

fn unavailable(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Unavailable { path: path.to_path_buf(), source }
}

/// Figure paths must stay inside the run directory.
fn safe_relative(path: &str) -> bool {
    let p = Path::new(path);
    !path.is_empty() && p.components().all(|c| matches!(c, Component::Normal(_)))
}

/// Writes `record` into the run directory `dir`, creating it if needed.
/// Figures are written first and `record.json` is replaced atomically, so a
/// reader never sees a record whose figures are missing.
pub fn persist_run(record: &RunRecord, dir: &Path) -> Result<PathBuf, StoreError> {
    fs::create_dir_all(dir).map_err(unavailable(dir))?;
    for figure in record.figures() {
        if !safe_relative(&figure.path) {
            return Err(StoreError::Corrupt { path: dir.to_path_buf(), reason: format!("unsafe figure path {:?}", figure.path) });
        }
        let target = dir.join(&figure.path);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent).map_err(unavailable(parent))?;
        }
        fs::write(&target, figure.bytes.as_slice()).map_err(unavailable(&target))?;
    }

    let envelope = EnvelopeOut { schema: SCHEMA, content_hash: record.content_hash(), record };
    let json = serde_json::to_vec_pretty(&envelope).expect("record serializes");
    let target = dir.join(RECORD_FILE);
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(unavailable(dir))?;
    tmp.write_all(&json).map_err(unavailable(&target))?;
    tmp.as_file().sync_all().map_err(unavailable(&target))?;
    tmp.persist(&target).map_err(|e| StoreError::Unavailable { path: target.clone(), source: e.error })?;
    Ok(target)
}

/// Loads a run from its directory (or directly from its `record.json`),
/// verifying the schema, content hash and every figure digest.
pub fn load_run(path: &Path) -> Result<RunRecord, StoreError> {
    let (dir, file) = if path.is_dir() {
        (path.to_path_buf(), path.join(RECORD_FILE))
    } else {
        (path.parent().map(Path::to_path_buf).unwrap_or_default(), path.to_path_buf())
    };
    let bytes = fs::read(&file).map_err(unavailable(&file))?;
    let corrupt = |reason: String| StoreError::Corrupt { path: file.clone(), reason };

    let envelope: EnvelopeIn = serde_json::from_slice(&bytes).map_err(|e| corrupt(format!("unreadable JSON: {e}")))?;
    if envelope.schema != SCHEMA {
        return Err(corrupt(format!("unknown schema {:?}", envelope.schema)));
    }
    let mut record = envelope.record;
    let actual = record.content_hash();
    if actual != envelope.content_hash {
        return Err(corrupt(format!("checksum mismatch: stored {}, computed {actual}", envelope.content_hash)));
    }
    for figure in record.figures_mut() {
        if !safe_relative(&figure.path) {
            return Err(corrupt(format!("unsafe figure path {:?}", figure.path)));
        }
        let fig_path = dir.join(&figure.path);
        let data = fs::read(&fig_path).map_err(|e| corrupt(format!("missing figure {}: {e}", figure.path)))?;
        figure.bytes = Arc::new(data);
        if !figure.digest_matches() {
            return Err(corrupt(format!("figure {} does not match its digest", figure.path)));
        }
    }
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PipelineMode;
    use crate::gateway::RoleTag;
    use crate::types::{Origin, Verdict};
    use proptest::prelude::*;

    fn png(seed: u8) -> Vec<u8> {
        let mut bytes = crate::executor::STUB_PNG.to_vec();
        bytes.push(seed);
        bytes
    }

    fn sample(figures: usize) -> RunRecord {
        let mut r = RunRecord::new(TaskInput::new("t1", "plot sales", "sales.csv: month, amount"), PipelineConfig::default());
        r.paths.push(ReasoningPath { index: 1, plan_text: "bar chart".into(), chart_intent: Some("bar".into()) });
        r.candidates.push(CandidateScript::new(1, "import matplotlib", Origin::MultiPath));
        let figs = (0..figures).map(|i| Figure::from_bytes(format!("figures/branch_1/fig_{}.png", i + 1), png(i as u8))).collect();
        r.outcomes.push(ExecutionOutcome::rendered(figs, 12));
        r.final_script = Some(CandidateScript::new(0, "import matplotlib", Origin::Synthesized));
        r.final_outcome = Some(ExecutionOutcome::failed("KeyError: 'x'", 3));
        r.ledger = StageLedger::new(1, 1, 1, 1);
        r
    }

    #[test]
    fn three_figures_become_three_files() {
        let dir = tempfile::tempdir().unwrap();
        persist_run(&sample(3), dir.path()).unwrap();
        let files = fs::read_dir(dir.path().join("figures/branch_1")).unwrap().count();
        assert_eq!(files, 3);
    }

    #[test]
    fn envelope_has_schema_and_hash() {
        let dir = tempfile::tempdir().unwrap();
        let record = sample(1);
        let path = persist_run(&record, dir.path()).unwrap();
        let v: Value = serde_json::from_slice(&fs::read(path).unwrap()).unwrap();
        assert_eq!(v["schema"], "plotsynth-run/1");
        assert_eq!(v["content_hash"], record.content_hash());
        assert!(v["record"]["final"].is_object());
        assert!(v["record"]["outcomes"][0]["figures"][0].get("bytes").is_none());
    }

    #[test]
    fn truncated_record_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = persist_run(&sample(2), dir.path()).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_run(dir.path()), Err(StoreError::Corrupt { .. })));
    }

    #[test]
    fn edited_record_fails_the_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = persist_run(&sample(1), dir.path()).unwrap();
        let text = fs::read_to_string(&path).unwrap().replace("plot sales", "plot costs");
        fs::write(&path, text).unwrap();
        let err = load_run(&path).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }

    #[test]
    fn altered_figure_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        persist_run(&sample(1), dir.path()).unwrap();
        fs::write(dir.path().join("figures/branch_1/fig_1.png"), b"not a png").unwrap();
        assert!(matches!(load_run(dir.path()), Err(StoreError::Corrupt { .. })));
    }

    #[test]
    fn missing_store_is_unavailable() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_run(&dir.path().join("nope")), Err(StoreError::Unavailable { .. })));
    }

    #[test]
    fn structural_form_ignores_timing() {
        let a = sample(1);
        let mut b = a.clone();
        b.started_at = a.started_at + chrono::Duration::seconds(30);
        b.finished_at = b.started_at;
        b.timings.total_ms = 999;
        b.outcomes[0].wall_time_ms = 77;
        assert!(a.structurally_eq(&b));
        assert_eq!(a.content_hash(), b.content_hash());
        b.outcomes[0].figures[0] = Figure::from_bytes("figures/branch_1/fig_1.png", png(9));
        assert_ne!(a.content_hash(), b.content_hash());
    }

    fn arb_outcome(branch: usize) -> impl Strategy<Value = ExecutionOutcome> {
        prop_oneof![
            (1usize..4, any::<u8>(), 0u64..5000).prop_map(move |(n, seed, ms)| {
                let figs = (0..n)
                    .map(|i| Figure::from_bytes(format!("figures/branch_{branch}/fig_{}.png", i + 1), png(seed.wrapping_add(i as u8))))
                    .collect();
                ExecutionOutcome::rendered(figs, ms)
            }),
            (".{1,40}", 0u64..5000).prop_map(|(e, ms)| ExecutionOutcome::failed(e, ms)),
            (0u64..5000).prop_map(|ms| ExecutionOutcome::timed_out("execution timed out", ms)),
        ]
    }

    fn arb_record() -> impl Strategy<Value = RunRecord> {
        (
            1usize..5,
            "[a-z0-9_-]{1,12}",
            ".{1,60}",
            prop::sample::select(PipelineMode::ALL.to_vec()),
            0.0f64..2.0,
            any::<i64>(),
        )
            .prop_flat_map(|(k, id, query, mode, temp, seconds)| {
                let outcomes: Vec<_> = (1..=k).map(arb_outcome).collect();
                let plans = prop::collection::vec(".{1,80}", k);
                let sources = prop::collection::vec("[ -~\n]{1,80}", k);
                (Just((k, id, query, mode, temp, seconds)), outcomes, plans, sources, arb_outcome(0), any::<bool>())
            })
            .prop_map(|((k, id, query, mode, temp, seconds), outcomes, plans, sources, final_outcome, failed)| {
                let config = PipelineConfig { k: k as i64, mode, gen_temperature: temp, ..PipelineConfig::default() };
                let mut r = RunRecord::new(TaskInput::new(id, query, "desc").with_file("d.csv", "/data/d.csv"), config);
                r.started_at = DateTime::from_timestamp(seconds.rem_euclid(4_000_000_000), 123_456_789).unwrap();
                r.finished_at = r.started_at;
                for (i, (plan, src)) in plans.into_iter().zip(sources).enumerate() {
                    r.paths.push(ReasoningPath { index: i + 1, plan_text: plan, chart_intent: None });
                    r.candidates.push(CandidateScript::new(i + 1, src, Origin::MultiPath));
                    r.feedback.push(FeedbackReport {
                        path_index: i + 1,
                        semantic_alignment: "ok".into(),
                        data_correctness: "ok".into(),
                        visual_quality: "ok".into(),
                        verdict: Verdict::Fixable,
                        raw_text: "raw".into(),
                        structured: true,
                    });
                    r.transcripts.push(TranscriptEntry {
                        id: format!("{i:064x}"),
                        role_tag: RoleTag::Code,
                        images: 0,
                        reprompt: false,
                        attempts: 1,
                        ok: true,
                    });
                }
                r.outcomes = outcomes;
                let final_outcome = match final_outcome.ok {
                    true => {
                        let figs = final_outcome.figures.iter().enumerate().map(|(i, f)| Figure::from_bytes(format!("figures/final/fig_{}.png", i + 1), f.bytes.to_vec())).collect();
                        ExecutionOutcome::rendered(figs, final_outcome.wall_time_ms)
                    }
                    false => final_outcome,
                };
                r.final_script = Some(CandidateScript::new(0, "final()", Origin::Synthesized));
                r.final_outcome = Some(final_outcome);
                r.ledger = StageLedger::new(1, k as u64, k as u64, 1);
                if failed {
                    r.failure = Some("run budget exhausted".into());
                }
                r
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn persistence_round_trip_is_lossless(record in arb_record()) {
            let dir = tempfile::tempdir().unwrap();
            persist_run(&record, dir.path()).unwrap();
            let loaded = load_run(dir.path()).unwrap();
            prop_assert!(loaded.structurally_eq(&record));
            prop_assert_eq!(loaded, record);
        }
    }
}
