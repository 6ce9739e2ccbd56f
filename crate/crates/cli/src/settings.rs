use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, ValueEnum};

use plotsynth::config::{validate_config, PipelineConfig, PipelineMode};
use plotsynth::demo::{demo_backend, demo_transport};
use plotsynth::executor::{ProcessTransport, RunnerTransport};
use plotsynth::gateway::{Backend, Gateway, LiveBackend, RecordingBackend, ReplayBackend, RoleTag};
use plotsynth::prompts::PromptSet;

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    /// OpenAI-compatible HTTP endpoint.
    Live,
    /// Forward to an inner backend and append every exchange to the cassette.
    Record,
    /// Answer only from the cassette; a miss is an error.
    Replay,
    /// Offline canned answers.
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InnerKind {
    Live,
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TransportKind {
    /// In-process fake runner driven by `# stub:` comments in the script.
    Stub,
    /// External runner process speaking the JSON protocol.
    Process,
}

/// Pipeline settings. Flags override the config file, which overrides the
/// built-in defaults.
#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// TOML file with pipeline settings.
    #[arg(long, global = true, env = "PLOTSYNTH_CONFIG")]
    pub config: Option<PathBuf>,
    /// Number of reasoning paths.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub k: Option<i64>,
    /// full, no_feedback, binary_feedback, zero_shot or cot.
    #[arg(long, visible_alias = "strategy", global = true)]
    pub mode: Option<PipelineMode>,
    /// Per-script execution limit in seconds.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub timeout: Option<f64>,
    /// Wall-clock budget for one run in seconds.
    #[arg(long, global = true)]
    pub run_budget: Option<f64>,
    /// Model override, e.g. `--model code=gpt-4o`. Repeatable.
    #[arg(long = "model", value_name = "ROLE=ID", global = true)]
    pub models: Vec<String>,
    /// Directory with prompt overrides.
    #[arg(long, global = true)]
    pub prompts: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BackendArgs {
    #[arg(long, value_enum, default_value_t = BackendKind::Live, global = true)]
    pub backend: BackendKind,
    /// Cassette file for the record and replay backends.
    #[arg(long, global = true)]
    pub cassette: Option<PathBuf>,
    /// Backend wrapped by `--backend record`.
    #[arg(long, value_enum, default_value_t = InnerKind::Live, global = true)]
    pub record_from: InnerKind,
    /// Defaults to `stub` with the scripted backend, `process` otherwise.
    #[arg(long, value_enum, global = true)]
    pub transport: Option<TransportKind>,
    /// Runner command for the process transport, split on whitespace.
    #[arg(long, env = "PLOTSYNTH_RUNNER", default_value = "plotsynth-runner", global = true)]
    pub runner: String,
}

fn read_config_file(path: &Path) -> anyhow::Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config file {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("invalid config file {}", path.display()))
}

impl ConfigArgs {
    pub fn resolve(&self, verbose: bool) -> Result<PipelineConfig, Failure> {
        let mut config = match &self.config {
            Some(path) => read_config_file(path).map_err(Failure::Config)?,
            None => PipelineConfig::default(),
        };
        let mut from_flags = Vec::new();
        if let Some(k) = self.k {
            config.k = k;
            from_flags.push("k");
        }
        if let Some(mode) = self.mode {
            config.mode = mode;
            from_flags.push("mode");
        }
        if let Some(t) = self.timeout {
            config.exec_timeout = t;
            from_flags.push("exec_timeout");
        }
        if let Some(b) = self.run_budget {
            config.run_budget = b;
            from_flags.push("run_budget");
        }
        for spec in &self.models {
            let (role, id) = spec.split_once('=').ok_or_else(|| Failure::Config(anyhow!("--model expects ROLE=ID, got `{spec}`")))?;
            let role: RoleTag = role.trim().parse().map_err(|e: String| Failure::Config(anyhow!(e)))?;
            let slot = match role {
                RoleTag::Mpa => &mut config.models.mpa,
                RoleTag::Code => &mut config.models.code,
                RoleTag::Fb => &mut config.models.fb,
                RoleTag::Syn => &mut config.models.syn,
                RoleTag::Judge => &mut config.models.judge,
                RoleTag::Baseline => &mut config.models.baseline,
            };
            *slot = id.trim().to_string();
            from_flags.push("models");
        }
        if let Some(dir) = &self.prompts {
            config.prompts_dir = Some(dir.clone());
            from_flags.push("prompts_dir");
        }

        let config = validate_config(config).map_err(|violations| {
            let lines: Vec<String> = violations.iter().map(|v| format!("{}: {}", v.field, v.message)).collect();
            Failure::Config(anyhow!("invalid configuration:\n  {}", lines.join("\n  ")))
        })?;

        if verbose {
            let file = self.config.as_ref().map_or("none".to_string(), |p| p.display().to_string());
            eprintln!("configuration (flags > file > defaults); file: {file}; set by flags: {}", if from_flags.is_empty() { "none".to_string() } else { from_flags.join(", ") });
            eprintln!("{}", toml::to_string_pretty(&config).unwrap_or_default().trim_end());
        }
        Ok(config)
    }
}

pub fn prompts(config: &PipelineConfig) -> Result<PromptSet, Failure> {
    match &config.prompts_dir {
        Some(dir) if !dir.is_dir() => Err(Failure::Config(anyhow!("prompt directory {} does not exist", dir.display()))),
        Some(dir) => PromptSet::load_dir(dir).map_err(|e| Failure::Config(e.into())),
        None => Ok(PromptSet::builtin()),
    }
}

fn live() -> Result<LiveBackend, Failure> {
    LiveBackend::from_env().map_err(|e| Failure::Config(e.into()))
}

fn with_inner(kind: InnerKind, f: impl FnOnce(Box<dyn Backend>) -> Result<Gateway, Failure>) -> Result<Gateway, Failure> {
    match kind {
        InnerKind::Live => f(Box::new(live()?)),
        InnerKind::Scripted => f(Box::new(demo_backend())),
    }
}

struct Boxed(Box<dyn Backend>);

impl Backend for Boxed {
    fn respond(&self, request: &plotsynth::gateway::ChatRequest) -> Result<plotsynth::gateway::ChatResponse, plotsynth::gateway::GatewayError> {
        self.0.respond(request)
    }
}

impl BackendArgs {
    pub fn gateway(&self) -> Result<Gateway, Failure> {
        match self.backend {
            BackendKind::Scripted => Ok(Gateway::new(demo_backend())),
            BackendKind::Live => Ok(Gateway::new(live()?)),
            BackendKind::Replay => {
                let path = self.cassette.as_ref().ok_or_else(|| Failure::Config(anyhow!("--backend replay needs --cassette")))?;
                if !path.is_file() {
                    return Err(Failure::Config(anyhow!("cassette {} does not exist", path.display())));
                }
                Ok(Gateway::new(ReplayBackend::open(path).map_err(|e| Failure::Config(e.into()))?))
            }
            BackendKind::Record => {
                let path = self.cassette.clone().ok_or_else(|| Failure::Config(anyhow!("--backend record needs --cassette")))?;
                with_inner(self.record_from, |inner| {
                    let rec = RecordingBackend::open(path, Boxed(inner)).map_err(|e| Failure::Config(e.into()))?;
                    Ok(Gateway::new(rec))
                })
            }
        }
    }

    pub fn transport(&self) -> Result<Box<dyn RunnerTransport>, Failure> {
        let kind = self.transport.unwrap_or(if self.backend == BackendKind::Scripted { TransportKind::Stub } else { TransportKind::Process });
        match kind {
            TransportKind::Stub => Ok(Box::new(demo_transport())),
            TransportKind::Process => {
                let command: Vec<String> = self.runner.split_whitespace().map(str::to_string).collect();
                let t = ProcessTransport::from_command(&command).map_err(|e| Failure::Config(anyhow!("--runner: {e}")))?;
                Ok(Box::new(t))
            }
        }
    }
}
