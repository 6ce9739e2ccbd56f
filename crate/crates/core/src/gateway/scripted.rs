use std::fmt;
use std::sync::Arc;

use regex::Regex;

use super::{Backend, ChatRequest, ChatResponse, GatewayError, RoleTag};

type ReplyFn = dyn Fn(&ChatRequest) -> String + Send + Sync;

/// What a matched rule answers with.
#[derive(Clone)]
pub enum Reply {
    Text(String),
    With(Arc<ReplyFn>),
    /// Simulated provider failure.
    Fail(String),
}

impl fmt::Debug for Reply {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reply::Text(t) => f.debug_tuple("Text").field(t).finish(),
            Reply::With(_) => f.write_str("With(<fn>)"),
            Reply::Fail(m) => f.debug_tuple("Fail").field(m).finish(),
        }
    }
}

#[derive(Debug, Clone)]
struct Rule {
    role: Option<RoleTag>,
    pattern: Regex,
    reply: Reply,
}

/// Offline backend answering from registered rules.
///
/// Rules match on `(role_tag, regex over the last user message)`; the first
/// matching rule in registration order wins.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    rules: Vec<Rule>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Panics on an invalid pattern; rules are written by tests and demos.
    pub fn rule(self, role: RoleTag, pattern: &str, text: impl Into<String>) -> Self {
        self.push(Some(role), pattern, Reply::Text(text.into()))
    }

    pub fn rule_fn<F>(self, role: RoleTag, pattern: &str, f: F) -> Self
    where
        F: Fn(&ChatRequest) -> String + Send + Sync + 'static,
    {
        self.push(Some(role), pattern, Reply::With(Arc::new(f)))
    }

    pub fn rule_fail(self, role: RoleTag, pattern: &str, message: impl Into<String>) -> Self {
        self.push(Some(role), pattern, Reply::Fail(message.into()))
    }

    /// Rule that applies to every role.
    pub fn fallback_fn<F>(self, pattern: &str, f: F) -> Self
    where
        F: Fn(&ChatRequest) -> String + Send + Sync + 'static,
    {
        self.push(None, pattern, Reply::With(Arc::new(f)))
    }

    fn push(mut self, role: Option<RoleTag>, pattern: &str, reply: Reply) -> Self {
        let pattern = Regex::new(pattern).unwrap_or_else(|e| panic!("bad scripted pattern `{pattern}`: {e}"));
        self.rules.push(Rule { role, pattern, reply });
        self
    }

    pub fn rule_count(&self) -> usize {
        self.rules.len()
    }
}

impl Backend for ScriptedBackend {
    fn respond(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let last = request.last_user_text();
        let rule = self
            .rules
            .iter()
            .find(|r| r.role.is_none_or(|role| role == request.role_tag) && r.pattern.is_match(last))
            .ok_or(GatewayError::NoRule { role: request.role_tag })?;
        let text = match &rule.reply {
            Reply::Text(t) => t.clone(),
            Reply::With(f) => f(request),
            Reply::Fail(message) => {
                return Err(GatewayError::Provider { message: message.clone(), attempts: 1 });
            }
        };
        Ok(ChatResponse::new(text))
    }
}
