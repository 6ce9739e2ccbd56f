use std::sync::{Arc, LazyLock};

use regex::Regex;
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::gateway::{ChatRequest, Gateway, GatewayError, Message, TranscriptEntry};
use crate::prompts::{PromptError, PromptKind, PromptSet};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("judge reply unusable after one reprompt: {0}")]
    Unusable(String),
}

static INTEGER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"-?\d+(?:\.\d+)?").unwrap());

/// Reads one integer score in `0..=100`. A trailing `/100` is tolerated;
/// anything else ambiguous is rejected.
pub fn parse_score(text: &str) -> Result<u8, String> {
    let numbers: Vec<&str> = INTEGER.find_iter(text).map(|m| m.as_str()).collect();
    let candidate = match numbers.as_slice() {
        [one] => *one,
        [one, "100"] if text.contains('/') => *one,
        [] => return Err("no score found".into()),
        _ => return Err(format!("expected one score, found {}", numbers.len())),
    };
    let value: i64 = candidate.parse().map_err(|_| format!("score `{candidate}` is not an integer"))?;
    if (0..=100).contains(&value) {
        Ok(value as u8)
    } else {
        Err(format!("score {value} is outside 0-100"))
    }
}

pub fn parse_yes_no(text: &str) -> Result<bool, String> {
    let lower = text.to_ascii_lowercase();
    match lower.split(|c: char| !c.is_alphanumeric()).find(|w| !w.is_empty()) {
        Some("yes") => Ok(true),
        Some("no") => Ok(false),
        _ => Err("expected yes or no".into()),
    }
}

pub struct Judge<'a> {
    gateway: &'a Gateway,
    prompts: &'a PromptSet,
    config: &'a PipelineConfig,
}

impl<'a> Judge<'a> {
    pub fn new(gateway: &'a Gateway, prompts: &'a PromptSet, config: &'a PipelineConfig) -> Self {
        Self { gateway, prompts, config }
    }

    fn request(&self, query: &str, extra: Option<&str>, images: &[&Arc<Vec<u8>>]) -> Result<ChatRequest, ScoreError> {
        let template = self.prompts.get(PromptKind::Judge);
        let mut text = template.render(&[("query", query)])?;
        if let Some(extra) = extra {
            text.push_str("\n\n");
            text.push_str(extra);
        }
        let mut user = Message::user(text);
        for img in images {
            user = user.with_image(Arc::clone(img));
        }
        Ok(ChatRequest::new(template.role_tag, &self.config.models.judge, self.config.judge_temperature, template.system_text.clone()).push(user))
    }

    fn ask<T>(&self, request: ChatRequest, sink: &mut Vec<TranscriptEntry>, parse: impl Fn(&str) -> Result<T, String>) -> Result<T, ScoreError> {
        let (reply, entry) = self.gateway.complete(&request, false);
        sink.push(entry);
        let text = reply?.text;
        let reason = match parse(&text) {
            Ok(v) => return Ok(v),
            Err(reason) => reason,
        };
        let retry = request.push(Message::user(format!(
            "Your previous reply could not be used: {reason}.\n\nPrevious reply:\n{text}\n\nAnswer again in the required format only."
        )));
        let (reply, entry) = self.gateway.complete(&retry, true);
        sink.push(entry);
        parse(&reply?.text).map_err(ScoreError::Unusable)
    }

    /// Similarity of the candidate figure to the reference, 0 to 100. The
    /// candidate is the first attachment, the reference the second.
    pub fn score_plot(&self, candidate: &Arc<Vec<u8>>, reference: &Arc<Vec<u8>>, query: &str, sink: &mut Vec<TranscriptEntry>) -> Result<u8, ScoreError> {
        let request = self.request(query, None, &[candidate, reference])?;
        self.ask(request, sink, parse_score)
    }

    /// Approximate correctness check: the judge prompt with a yes/no
    /// question instead of a score.
    pub fn judge_correct(&self, candidate: &Arc<Vec<u8>>, reference: Option<&Arc<Vec<u8>>>, query: &str, sink: &mut Vec<TranscriptEntry>) -> Result<bool, ScoreError> {
        let mut images = vec![candidate];
        images.extend(reference);
        let request = self.request(query, Some(CORRECTNESS_QUESTION), &images)?;
        self.ask(request, sink, parse_yes_no)
    }
}

pub const CORRECTNESS_QUESTION: &str =
    "Do not give a score this time. Answer yes if the generated chart correctly fulfils the request, otherwise answer no.";
