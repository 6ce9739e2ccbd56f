use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Backend, ChatRequest, ChatResponse, GatewayError, RoleTag, Usage};

/// One recorded exchange; serialized as a single JSON line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub fingerprint: String,
    pub role_tag: RoleTag,
    pub response_text: String,
    pub usage: Usage,
}

/// Recorded responses keyed by request fingerprint, in recording order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Cassette {
    entries: Vec<CassetteEntry>,
    index: HashMap<String, usize>,
}

impl Cassette {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let file = File::open(path).map_err(|e| GatewayError::Cassette(format!("{}: {e}", path.display())))?;
        let mut cassette = Cassette::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| GatewayError::Cassette(format!("{}: {e}", path.display())))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: CassetteEntry = serde_json::from_str(&line)
                .map_err(|e| GatewayError::Cassette(format!("{}:{}: {e}", path.display(), n + 1)))?;
            cassette.insert(entry);
        }
        Ok(cassette)
    }

    pub fn save(&self, path: &Path) -> Result<(), GatewayError> {
        let mut out = String::new();
        for entry in &self.entries {
            out.push_str(&serde_json::to_string(entry).expect("cassette entries serialize"));
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| GatewayError::Cassette(format!("{}: {e}", path.display())))
    }

    /// Adds an entry unless its fingerprint is already present. Returns
    /// whether it was added.
    pub fn insert(&mut self, entry: CassetteEntry) -> bool {
        if self.index.contains_key(&entry.fingerprint) {
            return false;
        }
        self.index.insert(entry.fingerprint.clone(), self.entries.len());
        self.entries.push(entry);
        true
    }

    pub fn get(&self, fingerprint: &str) -> Option<&CassetteEntry> {
        self.index.get(fingerprint).map(|&i| &self.entries[i])
    }

    pub fn entries(&self) -> &[CassetteEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry count per role tag, sorted by role.
    pub fn role_counts(&self) -> Vec<(RoleTag, usize)> {
        let mut counts: HashMap<RoleTag, usize> = HashMap::new();
        for e in &self.entries {
            *counts.entry(e.role_tag).or_default() += 1;
        }
        let mut counts: Vec<_> = counts.into_iter().collect();
        counts.sort();
        counts
    }
}

/// Answers strictly from a cassette; read-only once loaded.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    cassette: Cassette,
}

impl ReplayBackend {
    pub fn new(cassette: Cassette) -> Self {
        Self { cassette }
    }

    pub fn open(path: &Path) -> Result<Self, GatewayError> {
        Ok(Self::new(Cassette::load(path)?))
    }
}

impl Backend for ReplayBackend {
    fn respond(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let fingerprint = request.fingerprint();
        let entry = self.cassette.get(&fingerprint).ok_or(GatewayError::CassetteMiss { fingerprint })?;
        Ok(ChatResponse { text: entry.response_text.clone(), usage: entry.usage, latency_ms: 0, attempts: 1 })
    }
}

/// Forwards to an inner backend and appends every new exchange to a
/// cassette file as it happens.
pub struct RecordingBackend {
    inner: Box<dyn Backend>,
    path: PathBuf,
    state: Mutex<(Cassette, File)>,
}

impl RecordingBackend {
    /// Opens (or creates) the cassette at `path`. Entries already in the
    /// file are kept; new fingerprints are appended.
    pub fn open(path: impl Into<PathBuf>, inner: impl Backend + 'static) -> Result<Self, GatewayError> {
        let path = path.into();
        let existing = if path.exists() { Cassette::load(&path)? } else { Cassette::new() };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| GatewayError::Cassette(format!("{}: {e}", parent.display())))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| GatewayError::Cassette(format!("{}: {e}", path.display())))?;
        Ok(Self { inner: Box::new(inner), path, state: Mutex::new((existing, file)) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn cassette(&self) -> Cassette {
        self.state.lock().expect("cassette lock poisoned").0.clone()
    }
}

impl Backend for RecordingBackend {
    fn respond(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let response = self.inner.respond(request)?;
        let entry = CassetteEntry {
            fingerprint: request.fingerprint(),
            role_tag: request.role_tag,
            response_text: response.text.clone(),
            usage: response.usage,
        };
        let mut guard = self.state.lock().expect("cassette lock poisoned");
        let (cassette, file) = &mut *guard;
        let line = serde_json::to_string(&entry).expect("cassette entries serialize");
        if cassette.insert(entry) {
            writeln!(file, "{line}")
                .and_then(|_| file.flush())
                .map_err(|e| GatewayError::Cassette(format!("{}: {e}", self.path.display())))?;
        }
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Message, ScriptedBackend};

    fn req(text: &str) -> ChatRequest {
        ChatRequest::new(RoleTag::Code, "m", 0.2, "sys").push(Message::user(text))
    }

    #[test]
    fn replay_returns_recorded_text_verbatim() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let text = "```python\nimport matplotlib\n```\n  trailing  ";
        let rec = RecordingBackend::open(&path, ScriptedBackend::new().rule(RoleTag::Code, ".*", text)).unwrap();
        rec.respond(&req("a")).unwrap();

        let replay = ReplayBackend::open(&path).unwrap();
        assert_eq!(replay.respond(&req("a")).unwrap().text, text);
    }

    #[test]
    fn replay_of_unrecorded_request_misses() {
        let replay = ReplayBackend::new(Cassette::new());
        let err = replay.respond(&req("never")).unwrap_err();
        assert!(matches!(err, GatewayError::CassetteMiss { fingerprint } if fingerprint == req("never").fingerprint()));
    }

    #[test]
    fn duplicate_fingerprints_are_written_once() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let rec = RecordingBackend::open(&path, ScriptedBackend::new().rule(RoleTag::Code, ".*", "x")).unwrap();
        rec.respond(&req("a")).unwrap();
        rec.respond(&req("a")).unwrap();
        rec.respond(&req("b")).unwrap();
        let lines = fs::read_to_string(&path).unwrap();
        assert_eq!(lines.lines().count(), 2);
        assert_eq!(Cassette::load(&path).unwrap().len(), 2);
    }

    #[test]
    fn cassette_lines_have_the_documented_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let rec = RecordingBackend::open(&path, ScriptedBackend::new().rule(RoleTag::Code, ".*", "x")).unwrap();
        rec.respond(&req("a")).unwrap();
        let v: serde_json::Value = serde_json::from_str(fs::read_to_string(&path).unwrap().trim()).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["fingerprint", "response_text", "role_tag", "usage"]);
        assert_eq!(v["role_tag"], "code");
    }

    #[test]
    fn reopening_keeps_previous_entries() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let scripted = ScriptedBackend::new().rule(RoleTag::Code, ".*", "x");
        RecordingBackend::open(&path, scripted.clone()).unwrap().respond(&req("a")).unwrap();
        let rec = RecordingBackend::open(&path, scripted).unwrap();
        rec.respond(&req("a")).unwrap();
        rec.respond(&req("b")).unwrap();
        assert_eq!(Cassette::load(&path).unwrap().len(), 2);
    }

    #[test]
    fn load_reports_bad_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        fs::write(&path, "{\"fingerprint\":\"a\",\"role_tag\":\"code\",\"response_text\":\"x\",\"usage\":{\"prompt_tokens\":0,\"completion_tokens\":0}}\nnot json\n").unwrap();
        let err = Cassette::load(&path).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
    }
}
