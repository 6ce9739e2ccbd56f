//! Chat-completion access shared by every agent role.
//!
//! A [`Gateway`] wraps one [`Backend`] (live provider, cassette recorder,
//! cassette replayer, or scripted rules) and keeps an append-only transcript
//! of every exchange. Calls are stateless: each request carries its own
//! system prompt and nothing is remembered between calls.

mod cassette;
mod live;
mod scripted;

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cassette::{Cassette, CassetteEntry, RecordingBackend, ReplayBackend};
pub use live::{LiveBackend, RetryPolicy, API_KEY_ENV, BASE_URL_ENV};
pub use scripted::{Reply, ScriptedBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleTag {
    Mpa,
    Code,
    Fb,
    Syn,
    Judge,
    Baseline,
}

impl RoleTag {
    pub fn as_str(self) -> &'static str {
        match self {
            RoleTag::Mpa => "mpa",
            RoleTag::Code => "code",
            RoleTag::Fb => "fb",
            RoleTag::Syn => "syn",
            RoleTag::Judge => "judge",
            RoleTag::Baseline => "baseline",
        }
    }

    pub fn accepts_images(self) -> bool {
        matches!(self, RoleTag::Fb | RoleTag::Judge)
    }
}

impl fmt::Display for RoleTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RoleTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "mpa" => RoleTag::Mpa,
            "code" => RoleTag::Code,
            "fb" => RoleTag::Fb,
            "syn" => RoleTag::Syn,
            "judge" => RoleTag::Judge,
            "baseline" => RoleTag::Baseline,
            other => return Err(format!("unknown role tag `{other}`")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub speaker: Speaker,
    pub text: String,
    /// PNG bytes, in presentation order.
    pub images: Vec<Arc<Vec<u8>>>,
}

impl Message {
    pub fn system(text: impl Into<String>) -> Self {
        Self { speaker: Speaker::System, text: text.into(), images: Vec::new() }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self { speaker: Speaker::User, text: text.into(), images: Vec::new() }
    }

    pub fn with_image(mut self, png: Arc<Vec<u8>>) -> Self {
        self.images.push(png);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub role_tag: RoleTag,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub model_id: String,
}

impl ChatRequest {
    pub fn new(role_tag: RoleTag, model_id: impl Into<String>, temperature: f64, system: impl Into<String>) -> Self {
        Self { role_tag, messages: vec![Message::system(system)], temperature, model_id: model_id.into() }
    }

    pub fn push(mut self, message: Message) -> Self {
        self.messages.push(message);
        self
    }

    pub fn last_user_text(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.speaker == Speaker::User)
            .map(|m| m.text.as_str())
            .unwrap_or("")
    }

    /// Full text of every user message, joined; handy for assertions.
    pub fn user_text(&self) -> String {
        self.messages
            .iter()
            .filter(|m| m.speaker == Speaker::User)
            .map(|m| m.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn image_count(&self) -> usize {
        self.messages.iter().map(|m| m.images.len()).sum()
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        match self.messages.first() {
            Some(m) if m.speaker == Speaker::System && !m.text.trim().is_empty() => {}
            _ => return Err(GatewayError::InvalidRequest("first message must be a non-empty system prompt".into())),
        }
        if self.messages.iter().skip(1).any(|m| m.speaker == Speaker::System) {
            return Err(GatewayError::InvalidRequest("only the first message may be a system prompt".into()));
        }
        if !self.role_tag.accepts_images() && self.image_count() > 0 {
            return Err(GatewayError::InvalidRequest(format!(
                "role `{}` may not carry image attachments",
                self.role_tag
            )));
        }
        Ok(())
    }

    /// Deterministic digest of everything that can influence the response.
    /// Attachments are hashed in message order.
    pub fn fingerprint(&self) -> String {
        fingerprint(self)
    }
}

pub fn fingerprint(request: &ChatRequest) -> String {
    fn field(h: &mut Sha256, bytes: &[u8]) {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    let mut h = Sha256::new();
    field(&mut h, b"plotsynth-request/1");
    field(&mut h, request.role_tag.as_str().as_bytes());
    field(&mut h, request.model_id.as_bytes());
    h.update(request.temperature.to_bits().to_le_bytes());
    h.update((request.messages.len() as u64).to_le_bytes());
    for m in &request.messages {
        field(&mut h, if m.speaker == Speaker::System { b"system" } else { b"user" });
        field(&mut h, m.text.as_bytes());
        h.update((m.images.len() as u64).to_le_bytes());
        for img in &m.images {
            field(&mut h, img);
        }
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Usage,
    pub latency_ms: u64,
    /// Provider attempts it took to obtain this response (1 without retries).
    pub attempts: u32,
}

impl ChatResponse {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into(), usage: Usage::default(), latency_ms: 0, attempts: 1 }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("provider error after {attempts} attempt(s): {message}")]
    Provider { message: String, attempts: u32 },
    #[error("cassette has no response for request {fingerprint}")]
    CassetteMiss { fingerprint: String },
    #[error("no scripted rule matches role `{role}`")]
    NoRule { role: RoleTag },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cassette i/o: {0}")]
    Cassette(String),
}

/// Anything that can answer a chat request.
pub trait Backend: Send + Sync {
    fn respond(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn respond(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).respond(request)
    }
}

/// One gateway exchange as it appears in transcripts and run records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    /// Exchange id: the request fingerprint.
    pub id: String,
    pub role_tag: RoleTag,
    pub images: usize,
    /// True for the follow-up sent after an unparseable response.
    pub reprompt: bool,
    pub attempts: u32,
    pub ok: bool,
}

pub struct Gateway {
    backend: Box<dyn Backend>,
    transcript: Mutex<Vec<TranscriptEntry>>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway").field("exchanges", &self.transcript_len()).finish()
    }
}

impl Gateway {
    pub fn new(backend: impl Backend + 'static) -> Self {
        Self { backend: Box::new(backend), transcript: Mutex::new(Vec::new()) }
    }

    /// Sends one request. The exchange is appended to the transcript whether
    /// or not it succeeds, and also returned so callers can keep their own
    /// ordered copy.
    pub fn complete(&self, request: &ChatRequest, reprompt: bool) -> (Result<ChatResponse, GatewayError>, TranscriptEntry) {
        let id = request.fingerprint();
        let result = request.validate().and_then(|_| self.backend.respond(request)).and_then(|r| {
            if r.text.is_empty() {
                Err(GatewayError::Provider { message: "empty response text".into(), attempts: r.attempts })
            } else {
                Ok(r)
            }
        });
        let attempts = match &result {
            Ok(r) => r.attempts,
            Err(GatewayError::Provider { attempts, .. }) => *attempts,
            Err(_) => 1,
        };
        let entry = TranscriptEntry {
            id,
            role_tag: request.role_tag,
            images: request.image_count(),
            reprompt,
            attempts,
            ok: result.is_ok(),
        };
        self.transcript.lock().expect("transcript lock poisoned").push(entry.clone());
        (result, entry)
    }

    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        self.transcript.lock().expect("transcript lock poisoned").clone()
    }

    pub fn transcript_len(&self) -> usize {
        self.transcript.lock().expect("transcript lock poisoned").len()
    }

    pub fn clear_transcript(&self) {
        self.transcript.lock().expect("transcript lock poisoned").clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request() -> ChatRequest {
        ChatRequest::new(RoleTag::Fb, "m", 0.2, "sys")
            .push(Message::user("look at this").with_image(Arc::new(vec![1, 2, 3, 4])))
    }

    #[test]
    fn fingerprint_is_deterministic() {
        assert_eq!(fingerprint(&request()), fingerprint(&request()));
        assert_eq!(fingerprint(&request()).len(), 64);
    }

    #[test]
    fn fingerprint_sees_temperature() {
        let mut other = request();
        other.temperature = 0.3;
        assert_ne!(fingerprint(&request()), fingerprint(&other));
    }

    #[test]
    fn fingerprint_sees_a_single_attachment_byte() {
        let mut other = request();
        let mut bytes = (*other.messages[1].images[0]).clone();
        bytes[2] ^= 0x01;
        other.messages[1].images[0] = Arc::new(bytes);
        assert_ne!(fingerprint(&request()), fingerprint(&other));
    }

    #[test]
    fn fingerprint_separates_message_boundaries() {
        let a = ChatRequest::new(RoleTag::Code, "m", 0.2, "ab").push(Message::user("c"));
        let b = ChatRequest::new(RoleTag::Code, "m", 0.2, "a").push(Message::user("bc"));
        assert_ne!(fingerprint(&a), fingerprint(&b));
    }

    #[test]
    fn images_only_allowed_for_feedback_and_judge() {
        assert!(request().validate().is_ok());
        let mut bad = request();
        bad.role_tag = RoleTag::Code;
        assert!(matches!(bad.validate(), Err(GatewayError::InvalidRequest(_))));
    }

    #[test]
    fn first_message_must_be_system() {
        let req = ChatRequest { role_tag: RoleTag::Code, messages: vec![Message::user("x")], temperature: 0.0, model_id: "m".into() };
        assert!(req.validate().is_err());
    }

    #[test]
    fn transcript_records_failures_too() {
        let gw = Gateway::new(ScriptedBackend::new());
        let (res, entry) = gw.complete(&request(), false);
        assert!(matches!(res, Err(GatewayError::NoRule { role: RoleTag::Fb })));
        assert!(!entry.ok);
        assert_eq!(entry.images, 1);
        assert_eq!(gw.transcript(), vec![entry]);
    }

    #[test]
    fn empty_text_is_never_a_success() {
        let gw = Gateway::new(ScriptedBackend::new().rule(RoleTag::Fb, ".*", ""));
        let (res, _) = gw.complete(&request(), false);
        assert!(matches!(res, Err(GatewayError::Provider { .. })));
    }
}
