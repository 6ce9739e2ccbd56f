//! Pipeline configuration and its validation.

use std::fmt;
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Which variant of the pipeline a run executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    /// Expand, generate, execute, visual feedback, synthesize.
    Full,
    /// As `Full`, but synthesis sees the candidates without any feedback.
    NoFeedback,
    /// As `Full`, but the feedback agent only sees the executability flag
    /// and error text, never the rendered image.
    BinaryFeedback,
    /// Single direct generation, no reasoning.
    ZeroShot,
    /// Single generation with chain-of-thought prompting.
    Cot,
}

impl PipelineMode {
    pub const ALL: [PipelineMode; 5] = [
        PipelineMode::Full,
        PipelineMode::NoFeedback,
        PipelineMode::BinaryFeedback,
        PipelineMode::ZeroShot,
        PipelineMode::Cot,
    ];

    pub fn is_baseline(self) -> bool {
        matches!(self, PipelineMode::ZeroShot | PipelineMode::Cot)
    }

    pub fn has_feedback(self) -> bool {
        matches!(self, PipelineMode::Full | PipelineMode::BinaryFeedback)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PipelineMode::Full => "full",
            PipelineMode::NoFeedback => "no_feedback",
            PipelineMode::BinaryFeedback => "binary_feedback",
            PipelineMode::ZeroShot => "zero_shot",
            PipelineMode::Cot => "cot",
        }
    }

    /// Human-facing method name used in report tables.
    pub fn method_label(self) -> &'static str {
        match self {
            PipelineMode::Full => "Multi-path + visual feedback",
            PipelineMode::NoFeedback => "Multi-path w/o visual feedback",
            PipelineMode::BinaryFeedback => "Multi-path + binary-only feedback",
            PipelineMode::ZeroShot => "Zero-Shot",
            PipelineMode::Cot => "CoT Prompting",
        }
    }
}

impl fmt::Display for PipelineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PipelineMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        PipelineMode::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| format!("unknown mode `{s}` (expected one of full, no_feedback, binary_feedback, zero_shot, cot)"))
    }
}

/// Model id per agent role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelMap {
    pub mpa: String,
    pub code: String,
    pub fb: String,
    pub syn: String,
    pub judge: String,
    pub baseline: String,
}

impl Default for ModelMap {
    fn default() -> Self {
        Self {
            mpa: "gpt-4o-mini".into(),
            code: "gpt-4o-mini".into(),
            fb: "gpt-4o".into(),
            syn: "gpt-4o-mini".into(),
            judge: "gpt-4o".into(),
            baseline: "gpt-4o-mini".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub k: i64,
    pub mode: PipelineMode,
    pub gen_temperature: f64,
    pub judge_temperature: f64,
    /// Per-script execution limit, seconds.
    pub exec_timeout: f64,
    pub max_error_chars: i64,
    pub models: ModelMap,
    /// Concurrent branches; `None` means one thread per branch.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parallelism: Option<usize>,
    /// Wall-clock budget for a whole run, seconds.
    pub run_budget: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompts_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: 3,
            mode: PipelineMode::Full,
            gen_temperature: 0.2,
            judge_temperature: 0.0,
            exec_timeout: 60.0,
            max_error_chars: 4000,
            models: ModelMap::default(),
            parallelism: None,
            run_budget: 600.0,
            prompts_dir: None,
        }
    }
}

/// One violated configuration invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigViolation {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl PipelineConfig {
    pub fn with_k(mut self, k: i64) -> Self {
        self.k = k;
        self
    }

    pub fn with_mode(mut self, mode: PipelineMode) -> Self {
        self.mode = mode;
        self
    }

    /// Number of branches, valid only after validation.
    pub fn branches(&self) -> usize {
        self.k.max(1) as usize
    }

    pub fn exec_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.exec_timeout.max(0.0))
    }

    pub fn run_budget(&self) -> Duration {
        Duration::from_secs_f64(self.run_budget.max(0.0))
    }

    pub fn error_limit(&self) -> usize {
        self.max_error_chars.max(1) as usize
    }

    pub fn branch_parallelism(&self) -> usize {
        self.parallelism.unwrap_or_else(|| self.branches()).max(1)
    }
}

/// Returns the config unchanged when every invariant holds, otherwise one
/// violation per offending field.
pub fn validate_config(config: PipelineConfig) -> Result<PipelineConfig, Vec<ConfigViolation>> {
    let mut errors = Vec::new();
    let mut fail = |field: &'static str, message: String| errors.push(ConfigViolation { field, message });

    if config.k < 1 {
        fail("k", "k must be ≥ 1".into());
    }
    for (field, t) in [("gen_temperature", config.gen_temperature), ("judge_temperature", config.judge_temperature)] {
        if !(0.0..=2.0).contains(&t) || t.is_nan() {
            fail(field, format!("{field} must be within [0, 2], got {t}"));
        }
    }
    if config.exec_timeout <= 0.0 || !config.exec_timeout.is_finite() {
        fail("exec_timeout", format!("exec_timeout must be > 0 seconds, got {}", config.exec_timeout));
    }
    if config.max_error_chars < 1 {
        fail("max_error_chars", format!("max_error_chars must be ≥ 1, got {}", config.max_error_chars));
    }
    if config.run_budget.is_nan() || config.run_budget <= 0.0 {
        fail("run_budget", format!("run_budget must be > 0 seconds, got {}", config.run_budget));
    }
    if config.parallelism == Some(0) {
        fail("parallelism", "parallelism must be ≥ 1".into());
    }
    for (field, id) in [
        ("models.mpa", &config.models.mpa),
        ("models.code", &config.models.code),
        ("models.fb", &config.models.fb),
        ("models.syn", &config.models.syn),
        ("models.judge", &config.models.judge),
        ("models.baseline", &config.models.baseline),
    ] {
        if id.trim().is_empty() {
            fail(field, format!("{field} must name a model"));
        }
    }

    if errors.is_empty() {
        Ok(config)
    } else {
        Err(errors)
    }
}
