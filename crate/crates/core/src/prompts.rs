//! Role prompt templates.
//!
//! A prompt file is plain text: the system prompt, then a line reading
//! `=== user ===`, then the user-message template. Templates use `{name}`
//! placeholders; `{{` and `}}` produce literal braces.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::gateway::RoleTag;

const USER_MARKER: &str = "=== user ===";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PromptKind {
    Mpa,
    Code,
    Fb,
    FbBinary,
    Syn,
    SynNoFb,
    ZeroShot,
    Cot,
    Judge,
}

impl PromptKind {
    pub const ALL: [PromptKind; 9] = [
        PromptKind::Mpa,
        PromptKind::Code,
        PromptKind::Fb,
        PromptKind::FbBinary,
        PromptKind::Syn,
        PromptKind::SynNoFb,
        PromptKind::ZeroShot,
        PromptKind::Cot,
        PromptKind::Judge,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            PromptKind::Mpa => "mpa.txt",
            PromptKind::Code => "code.txt",
            PromptKind::Fb => "fb.txt",
            PromptKind::FbBinary => "fb_binary.txt",
            PromptKind::Syn => "syn.txt",
            PromptKind::SynNoFb => "syn_nofb.txt",
            PromptKind::ZeroShot => "zero_shot.txt",
            PromptKind::Cot => "cot.txt",
            PromptKind::Judge => "judge.txt",
        }
    }

    pub fn role_tag(self) -> RoleTag {
        match self {
            PromptKind::Mpa => RoleTag::Mpa,
            PromptKind::Code => RoleTag::Code,
            PromptKind::Fb | PromptKind::FbBinary => RoleTag::Fb,
            PromptKind::Syn | PromptKind::SynNoFb => RoleTag::Syn,
            PromptKind::ZeroShot | PromptKind::Cot => RoleTag::Baseline,
            PromptKind::Judge => RoleTag::Judge,
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            PromptKind::Mpa => include_str!("../prompts/mpa.txt"),
            PromptKind::Code => include_str!("../prompts/code.txt"),
            PromptKind::Fb => include_str!("../prompts/fb.txt"),
            PromptKind::FbBinary => include_str!("../prompts/fb_binary.txt"),
            PromptKind::Syn => include_str!("../prompts/syn.txt"),
            PromptKind::SynNoFb => include_str!("../prompts/syn_nofb.txt"),
            PromptKind::ZeroShot => include_str!("../prompts/zero_shot.txt"),
            PromptKind::Cot => include_str!("../prompts/cot.txt"),
            PromptKind::Judge => include_str!("../prompts/judge.txt"),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("placeholder {{{0}}} is not bound")]
    Unbound(String),
    #[error("unbalanced brace at byte {0}")]
    Unbalanced(usize),
    #[error("{file}: {reason}")]
    BadFile { file: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub role_tag: RoleTag,
    pub system_text: String,
    pub user_template: String,
}

impl PromptTemplate {
    pub fn parse(kind: PromptKind, text: &str) -> Result<Self, PromptError> {
        let bad = |reason: &str| PromptError::BadFile { file: kind.file_name().into(), reason: reason.into() };
        let mut system = Vec::new();
        let mut user = Vec::new();
        let mut in_user = false;
        for line in text.lines() {
            if !in_user && line.trim() == USER_MARKER {
                in_user = true;
            } else if in_user {
                user.push(line);
            } else {
                system.push(line);
            }
        }
        if !in_user {
            return Err(bad("missing `=== user ===` separator"));
        }
        let system_text = system.join("\n").trim().to_string();
        if system_text.is_empty() {
            return Err(bad("system prompt is empty"));
        }
        let user_template = user.join("\n").trim().to_string();
        // Surface brace mistakes at load time rather than mid-run.
        placeholders(&user_template).map_err(|e| bad(&e.to_string()))?;
        Ok(Self { role_tag: kind.role_tag(), system_text, user_template })
    }

    pub fn placeholders(&self) -> Vec<String> {
        placeholders(&self.user_template).unwrap_or_default()
    }

    /// Substitutes every placeholder; unbound names are an error.
    pub fn render(&self, vars: &[(&str, &str)]) -> Result<String, PromptError> {
        render(&self.user_template, vars)
    }
}

enum Token<'a> {
    Lit(&'a str),
    Name(&'a str),
}

fn tokenize(template: &str) -> Result<Vec<Token<'_>>, PromptError> {
    let bytes = template.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    let mut lit_start = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' | b'}' if bytes.get(i + 1) == Some(&bytes[i]) => {
                tokens.push(Token::Lit(&template[lit_start..i + 1]));
                i += 2;
                lit_start = i;
            }
            b'{' => {
                let end = template[i + 1..].find('}').map(|e| e + i + 1).ok_or(PromptError::Unbalanced(i))?;
                let name = &template[i + 1..end];
                if name.is_empty() || !name.bytes().all(|b| b.is_ascii_lowercase() || b == b'_') {
                    return Err(PromptError::Unbalanced(i));
                }
                tokens.push(Token::Lit(&template[lit_start..i]));
                tokens.push(Token::Name(name));
                i = end + 1;
                lit_start = i;
            }
            b'}' => return Err(PromptError::Unbalanced(i)),
            _ => i += 1,
        }
    }
    tokens.push(Token::Lit(&template[lit_start..]));
    Ok(tokens)
}

fn placeholders(template: &str) -> Result<Vec<String>, PromptError> {
    Ok(tokenize(template)?
        .into_iter()
        .filter_map(|t| match t {
            Token::Name(n) => Some(n.to_string()),
            Token::Lit(_) => None,
        })
        .collect())
}

pub fn render(template: &str, vars: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    for token in tokenize(template)? {
        match token {
            Token::Lit(l) => out.push_str(l),
            Token::Name(name) => {
                let value = vars
                    .iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| PromptError::Unbound(name.to_string()))?;
                out.push_str(value);
            }
        }
    }
    Ok(out)
}

/// The nine role templates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    templates: Vec<(PromptKind, PromptTemplate)>,
}

impl PromptSet {
    pub fn builtin() -> Self {
        let templates = PromptKind::ALL
            .iter()
            .map(|&k| (k, PromptTemplate::parse(k, k.builtin()).expect("built-in prompts parse")))
            .collect();
        Self { templates }
    }

    /// Built-ins, overridden by any role file present in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::builtin();
        for (kind, template) in &mut set.templates {
            let path = dir.join(kind.file_name());
            if path.exists() {
                let text = fs::read_to_string(&path)
                    .map_err(|e| PromptError::BadFile { file: path.display().to_string(), reason: e.to_string() })?;
                *template = PromptTemplate::parse(*kind, &text)?;
            }
        }
        Ok(set)
    }

    pub fn get(&self, kind: PromptKind) -> &PromptTemplate {
        &self.templates.iter().find(|(k, _)| *k == kind).expect("every kind is present").1
    }
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse_with_expected_placeholders() {
        let set = PromptSet::builtin();
        let expect: &[(PromptKind, &[&str])] = &[
            (PromptKind::Mpa, &["query", "dataset", "k"]),
            (PromptKind::Code, &["dataset", "plan"]),
            (PromptKind::Fb, &["query", "code", "outcome"]),
            (PromptKind::FbBinary, &["query", "code", "outcome"]),
            (PromptKind::Syn, &["query", "dataset", "k", "feedback_bundle"]),
            (PromptKind::SynNoFb, &["query", "dataset", "k", "feedback_bundle"]),
            (PromptKind::ZeroShot, &["query", "dataset"]),
            (PromptKind::Cot, &["query", "dataset"]),
            (PromptKind::Judge, &["query"]),
        ];
        for (kind, names) in expect {
            assert_eq!(set.get(*kind).placeholders(), *names, "{kind:?}");
            assert!(!set.get(*kind).system_text.is_empty());
        }
    }

    #[test]
    fn render_substitutes_without_rescanning_values() {
        let out = render("a {x} b {y}", &[("x", "{y}"), ("y", "2")]).unwrap();
        assert_eq!(out, "a {y} b 2");
    }

    #[test]
    fn unbound_placeholder_fails() {
        assert_eq!(render("hi {query}", &[]), Err(PromptError::Unbound("query".into())));
    }

    #[test]
    fn doubled_braces_are_literal() {
        assert_eq!(render("d = {{'a': {v}}}", &[("v", "1")]).unwrap(), "d = {'a': 1}");
    }

    #[test]
    fn stray_brace_is_rejected_at_parse() {
        let err = PromptTemplate::parse(PromptKind::Code, "sys\n=== user ===\nx = {1: 2}").unwrap_err();
        assert!(matches!(err, PromptError::BadFile { .. }));
    }

    #[test]
    fn missing_separator_or_system_is_rejected() {
        assert!(PromptTemplate::parse(PromptKind::Code, "just text").is_err());
        assert!(PromptTemplate::parse(PromptKind::Code, "\n=== user ===\n{plan}").is_err());
    }

    #[test]
    fn directory_overrides_single_roles() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("code.txt"), "custom system\n=== user ===\nonly {plan}").unwrap();
        let set = PromptSet::load_dir(dir.path()).unwrap();
        assert_eq!(set.get(PromptKind::Code).system_text, "custom system");
        assert_eq!(set.get(PromptKind::Mpa), PromptSet::builtin().get(PromptKind::Mpa));
    }
}
