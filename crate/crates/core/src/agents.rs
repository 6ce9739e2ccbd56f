//! The agent roles: path expansion, code generation, candidate feedback,
//! synthesis, and the two single-shot baselines.
//!
//! Each role is a prompt template plus an output parser over the gateway.
//! A role issues one gateway call and at most one reprompt when the reply
//! cannot be parsed. Every exchange is appended to the caller's sink so the
//! pipeline can keep transcripts in a deterministic order.

use std::sync::{Arc, LazyLock};

use regex::Regex;
use thiserror::Error;

use crate::config::{ModelMap, PipelineConfig, PipelineMode};
use crate::gateway::{ChatRequest, Gateway, GatewayError, Message, RoleTag, TranscriptEntry};
use crate::prompts::{PromptError, PromptKind, PromptSet};
use crate::types::{CandidateScript, ExecutionOutcome, FeedbackReport, Origin, ReasoningPath, TaskInput, Verdict};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("{role} reply could not be parsed after one reprompt: {detail}")]
    ParseFailure { role: RoleTag, detail: String },
    #[error("{role} reply contained no code after one reprompt")]
    EmptyCode { role: RoleTag },
}

/// What the feedback agent is allowed to see.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedbackMode {
    /// Rendered figure for successful runs, error text for failures.
    Visual,
    /// Executability flag and error text only.
    Binary,
}

impl FeedbackMode {
    pub fn for_pipeline(mode: PipelineMode) -> Option<Self> {
        match mode {
            PipelineMode::Full => Some(FeedbackMode::Visual),
            PipelineMode::BinaryFeedback => Some(FeedbackMode::Binary),
            _ => None,
        }
    }
}

enum Parsed<T> {
    Done(T),
    Retry(String),
}

pub struct Agents<'a> {
    gateway: &'a Gateway,
    prompts: &'a PromptSet,
    models: &'a ModelMap,
    gen_temperature: f64,
    judge_temperature: f64,
}

impl<'a> Agents<'a> {
    pub fn new(gateway: &'a Gateway, prompts: &'a PromptSet, config: &'a PipelineConfig) -> Self {
        Self {
            gateway,
            prompts,
            models: &config.models,
            gen_temperature: config.gen_temperature,
            judge_temperature: config.judge_temperature,
        }
    }

    fn model(&self, role: RoleTag) -> &str {
        match role {
            RoleTag::Mpa => &self.models.mpa,
            RoleTag::Code => &self.models.code,
            RoleTag::Fb => &self.models.fb,
            RoleTag::Syn => &self.models.syn,
            RoleTag::Judge => &self.models.judge,
            RoleTag::Baseline => &self.models.baseline,
        }
    }

    fn request(&self, kind: PromptKind, vars: &[(&str, &str)], temperature: f64, images: &[Arc<Vec<u8>>]) -> Result<ChatRequest, AgentError> {
        let template = self.prompts.get(kind);
        let mut user = Message::user(template.render(vars)?);
        for img in images {
            user = user.with_image(img.clone());
        }
        Ok(ChatRequest::new(template.role_tag, self.model(template.role_tag), temperature, template.system_text.clone()).push(user))
    }

    /// One call, then one reprompt if `parse` asks for it. `on_exhausted`
    /// builds the error when the reprompt is also unusable.
    fn ask<T>(
        &self,
        request: ChatRequest,
        sink: &mut Vec<TranscriptEntry>,
        parse: impl Fn(&str) -> Parsed<T>,
        on_exhausted: impl FnOnce(String) -> AgentError,
    ) -> Result<T, AgentError> {
        let (first, entry) = self.gateway.complete(&request, false);
        sink.push(entry);
        let text = first?.text;
        let reason = match parse(&text) {
            Parsed::Done(v) => return Ok(v),
            Parsed::Retry(reason) => reason,
        };
        tracing::debug!(role = %request.role_tag, %reason, "reprompting");
        let follow_up = Message::user(format!(
            "Your previous reply could not be used: {reason}.\n\nPrevious reply:\n{text}\n\nAnswer again and follow the required output format exactly."
        ));
        let retry = request.push(follow_up);
        let (second, entry) = self.gateway.complete(&retry, true);
        sink.push(entry);
        match parse(&second?.text) {
            Parsed::Done(v) => Ok(v),
            Parsed::Retry(reason) => Err(on_exhausted(reason)),
        }
    }

    fn ask_code(&self, request: ChatRequest, sink: &mut Vec<TranscriptEntry>) -> Result<String, AgentError> {
        let role = request.role_tag;
        self.ask(
            request,
            sink,
            |text| match extract_code(text) {
                Some(code) => Parsed::Done(code),
                None => Parsed::Retry("no fenced code block was found".into()),
            },
            |_| AgentError::EmptyCode { role },
        )
    }

    /// Asks for `k` distinct plans in one call.
    pub fn expand_paths(&self, input: &TaskInput, k: usize, sink: &mut Vec<TranscriptEntry>) -> Result<Vec<ReasoningPath>, AgentError> {
        assert!(k >= 1, "k must be at least 1");
        let k_text = k.to_string();
        let dataset = input.dataset_context();
        let request = self.request(
            PromptKind::Mpa,
            &[("query", &input.query), ("dataset", &dataset), ("k", &k_text)],
            self.gen_temperature,
            &[],
        )?;
        let plans = self.ask(
            request,
            sink,
            |text| match parse_plans(text, k) {
                Ok(plans) => Parsed::Done(plans),
                Err(reason) => Parsed::Retry(reason),
            },
            |detail| AgentError::ParseFailure { role: RoleTag::Mpa, detail },
        )?;
        Ok(plans
            .into_iter()
            .enumerate()
            .map(|(i, plan_text)| ReasoningPath { index: i + 1, chart_intent: chart_intent(&plan_text), plan_text })
            .collect())
    }

    /// Turns one plan into a script. The dataset context goes into the
    /// prompt verbatim.
    pub fn generate_code(&self, dataset: &str, path: &ReasoningPath, temperature: f64, sink: &mut Vec<TranscriptEntry>) -> Result<CandidateScript, AgentError> {
        let request = self.request(PromptKind::Code, &[("dataset", dataset), ("plan", &path.plan_text)], temperature, &[])?;
        let source = self.ask_code(request, sink)?;
        Ok(CandidateScript::new(path.index, source, Origin::MultiPath))
    }

    /// Reviews one candidate. In visual mode a successful outcome's first
    /// figure is attached; failures and binary mode send text only. An
    /// unstructured reply is kept as-is rather than failing the branch.
    pub fn evaluate_candidate(
        &self,
        query: &str,
        script: &CandidateScript,
        outcome: &ExecutionOutcome,
        mode: FeedbackMode,
        sink: &mut Vec<TranscriptEntry>,
    ) -> Result<FeedbackReport, AgentError> {
        let (kind, outcome_text, images) = match mode {
            FeedbackMode::Visual => {
                let images: Vec<_> = outcome.first_figure().map(|f| f.bytes.clone()).into_iter().collect();
                (PromptKind::Fb, describe_outcome_visual(outcome), images)
            }
            FeedbackMode::Binary => (PromptKind::FbBinary, describe_outcome_binary(outcome), Vec::new()),
        };
        let request = self.request(
            kind,
            &[("query", query), ("code", &script.source), ("outcome", &outcome_text)],
            self.judge_temperature,
            &images,
        )?;
        let (reply, entry) = self.gateway.complete(&request, false);
        sink.push(entry);
        let raw = reply?.text;
        Ok(parse_feedback(script.path_index, &raw, outcome.ok))
    }

    /// Fan-in: one final program from every candidate and its review.
    /// Reviews are absent only in the no-feedback ablation.
    pub fn synthesize(
        &self,
        query: &str,
        dataset: &str,
        pairs: &[(CandidateScript, Option<FeedbackReport>)],
        sink: &mut Vec<TranscriptEntry>,
    ) -> Result<CandidateScript, AgentError> {
        assert!(!pairs.is_empty(), "synthesis needs at least one candidate");
        let with_feedback = pairs.iter().any(|(_, fb)| fb.is_some());
        let kind = if with_feedback { PromptKind::Syn } else { PromptKind::SynNoFb };
        let bundle = feedback_bundle(pairs);
        let k = pairs.len().to_string();
        let request = self.request(
            kind,
            &[("query", query), ("dataset", dataset), ("k", &k), ("feedback_bundle", &bundle)],
            self.gen_temperature,
            &[],
        )?;
        let source = self.ask_code(request, sink)?;
        Ok(CandidateScript::new(0, source, Origin::Synthesized))
    }

    pub fn zero_shot_generate(&self, query: &str, dataset: &str, sink: &mut Vec<TranscriptEntry>) -> Result<CandidateScript, AgentError> {
        self.baseline(PromptKind::ZeroShot, Origin::ZeroShot, query, dataset, sink)
    }

    pub fn cot_generate(&self, query: &str, dataset: &str, sink: &mut Vec<TranscriptEntry>) -> Result<CandidateScript, AgentError> {
        self.baseline(PromptKind::Cot, Origin::Cot, query, dataset, sink)
    }

    fn baseline(&self, kind: PromptKind, origin: Origin, query: &str, dataset: &str, sink: &mut Vec<TranscriptEntry>) -> Result<CandidateScript, AgentError> {
        let request = self.request(kind, &[("query", query), ("dataset", dataset)], self.gen_temperature, &[])?;
        let source = self.ask_code(request, sink)?;
        Ok(CandidateScript::new(0, source, origin))
    }
}

fn describe_outcome_visual(outcome: &ExecutionOutcome) -> String {
    if outcome.ok {
        format!(
            "The script executed successfully and rendered {} figure(s). The first figure is attached.",
            outcome.figures.len()
        )
    } else {
        let what = if outcome.timed_out { "was stopped at the time limit" } else { "failed" };
        format!("The script {what} and produced no figure.\nError:\n{}", outcome.error_text.as_deref().unwrap_or(""))
    }
}

fn describe_outcome_binary(outcome: &ExecutionOutcome) -> String {
    if outcome.ok {
        "Executable: yes".to_string()
    } else {
        format!("Executable: no\nError:\n{}", outcome.error_text.as_deref().unwrap_or(""))
    }
}

/// Candidates in the given order, each followed by its review when present.
pub fn feedback_bundle(pairs: &[(CandidateScript, Option<FeedbackReport>)]) -> String {
    let mut out = String::new();
    for (i, (script, feedback)) in pairs.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("### Candidate {}\n```python\n{}\n```\n", i + 1, script.source.trim_end()));
        if let Some(fb) = feedback {
            out.push_str("Review:\n");
            if fb.structured {
                out.push_str(&format!(
                    "SEMANTIC ALIGNMENT: {}\nDATA CORRECTNESS: {}\nVISUAL QUALITY: {}\nVERDICT: {}\n",
                    fb.semantic_alignment, fb.data_correctness, fb.visual_quality, fb.verdict
                ));
            } else {
                out.push_str(fb.raw_text.trim_end());
                out.push('\n');
            }
        }
    }
    out
}

static PLAN_MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?mi)^[ \t#*>-]*PLAN[ \t]+(\d+)[ \t*]*[:.)][ \t*]*").unwrap());
static CHART_TYPE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?mi)^[ \t*-]*chart[ \t]*type[ \t*]*:[ \t*]*(.+)$").unwrap());
static FEEDBACK_HEADING: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?mi)^[ \t#*\d.]*(SEMANTIC ALIGNMENT|DATA CORRECTNESS|VISUAL QUALITY|VERDICT)[ \t*]*:[ \t*]*").unwrap()
});

/// Splits a multi-plan reply on `PLAN <n>:` markers and keeps the first
/// `k`. With `k == 1` an unmarked reply is a single plan.
pub fn parse_plans(text: &str, k: usize) -> Result<Vec<String>, String> {
    let markers: Vec<_> = PLAN_MARKER.find_iter(text).collect();
    if markers.is_empty() {
        let whole = text.trim();
        return if k == 1 && !whole.is_empty() {
            Ok(vec![whole.to_string()])
        } else {
            Err(format!("expected {k} plans introduced by `PLAN <n>:` markers, found none"))
        };
    }
    let mut plans = Vec::with_capacity(markers.len());
    for (i, m) in markers.iter().enumerate() {
        let end = markers.get(i + 1).map_or(text.len(), |next| next.start());
        let body = text[m.end()..end].trim().trim_end_matches(['*', '-']).trim();
        if body.is_empty() {
            return Err(format!("plan {} is empty", i + 1));
        }
        plans.push(body.to_string());
    }
    if plans.len() < k {
        return Err(format!("expected {k} plans, found {}", plans.len()));
    }
    if plans.len() > k {
        tracing::warn!(found = plans.len(), k, "more plans than requested; keeping the first k");
        plans.truncate(k);
    }
    Ok(plans)
}

/// Short chart-type tag from a plan's `Chart type:` line.
pub fn chart_intent(plan: &str) -> Option<String> {
    let raw = CHART_TYPE.captures(plan)?.get(1)?.as_str();
    let tag: String = raw.trim().trim_matches(['*', '.', ' ']).to_lowercase().chars().take(40).collect();
    (!tag.is_empty()).then_some(tag)
}

/// Concatenates every fenced block (language tag ignored), separated by one
/// blank line. Without fences the whole text counts only if its first
/// non-blank line looks like Python code.
pub fn extract_code(text: &str) -> Option<String> {
    static CODE_START: LazyLock<Regex> = LazyLock::new(|| {
        Regex::new(r"^(import\s+\w|from\s+[\w.]+\s+import\s|[A-Za-z_][\w.]*(\[[^\]]*\])?(\s*,\s*[A-Za-z_]\w*)*\s*=[^=])").unwrap()
    });

    let mut blocks: Vec<String> = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in text.lines() {
        let is_fence = line.trim_start().starts_with("```");
        match (&mut current, is_fence) {
            (None, true) => current = Some(Vec::new()),
            (Some(lines), true) => {
                blocks.push(lines.join("\n"));
                current = None;
            }
            (Some(lines), false) => lines.push(line),
            (None, false) => {}
        }
    }
    if let Some(lines) = current {
        // unterminated final fence
        blocks.push(lines.join("\n"));
    }
    let blocks: Vec<String> = blocks
        .into_iter()
        .map(|b| b.trim_end().trim_start_matches('\n').to_string())
        .filter(|b| !b.trim().is_empty())
        .collect();
    if !blocks.is_empty() {
        return Some(blocks.join("\n\n"));
    }
    let first = text.lines().find(|l| !l.trim().is_empty())?;
    CODE_START.is_match(first.trim_start()).then(|| text.trim().to_string())
}

/// Splits a review into its three findings and verdict. Missing sections
/// fall back to copies of the whole reply.
pub fn parse_feedback(path_index: usize, raw: &str, executed: bool) -> FeedbackReport {
    let heads: Vec<_> = FEEDBACK_HEADING.captures_iter(raw).collect();
    let mut semantic = None;
    let mut data = None;
    let mut visual = None;
    let mut verdict = None;
    for (i, cap) in heads.iter().enumerate() {
        let whole = cap.get(0).unwrap();
        let end = heads.get(i + 1).map_or(raw.len(), |n| n.get(0).unwrap().start());
        let body = raw[whole.end()..end].trim().to_string();
        let slot = match cap[1].to_ascii_uppercase().as_str() {
            "SEMANTIC ALIGNMENT" => &mut semantic,
            "DATA CORRECTNESS" => &mut data,
            "VISUAL QUALITY" => &mut visual,
            _ => {
                if verdict.is_none() {
                    verdict = body.split_whitespace().next().and_then(Verdict::parse);
                }
                continue;
            }
        };
        if slot.is_none() && !body.is_empty() {
            *slot = Some(body);
        }
    }
    let structured = semantic.is_some() && data.is_some() && visual.is_some() && verdict.is_some();
    let fallback = || raw.trim().to_string();
    FeedbackReport {
        path_index,
        semantic_alignment: semantic.unwrap_or_else(fallback),
        data_correctness: data.unwrap_or_else(fallback),
        visual_quality: visual.unwrap_or_else(fallback),
        verdict: verdict.unwrap_or(if executed { Verdict::Fixable } else { Verdict::Discard }),
        raw_text: raw.to_string(),
        structured,
    }
}
