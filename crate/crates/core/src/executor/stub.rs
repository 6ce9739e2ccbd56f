//! In-process transport for tests and offline demos.
//!
//! The stub never runs the script. A behavior function decides what the
//! "runner" reports, and figures are written as small PNG files so the rest
//! of the pipeline sees real artifacts.

use std::fs;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, LazyLock};
use std::thread;
use std::time::{Duration, Instant};

use regex::Regex;

use super::transport::{RawResult, RunHandle, RunnerTransport, SandboxJob, TransportError};

/// A valid 1x1 RGB PNG.
pub const STUB_PNG: [u8; 69] = [
    0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48, 0x44, 0x52, 0x00, 0x00, 0x00,
    0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x02, 0x00, 0x00, 0x00, 0x90, 0x77, 0x53, 0xde, 0x00, 0x00, 0x00, 0x0c, 0x49,
    0x44, 0x41, 0x54, 0x78, 0x9c, 0x63, 0x90, 0x2f, 0xdf, 0x02, 0x00, 0x02, 0x03, 0x01, 0x4b, 0x2b, 0xfd, 0xf2, 0x0d,
    0x00, 0x00, 0x00, 0x00, 0x49, 0x45, 0x4e, 0x44, 0xae, 0x42, 0x60, 0x82,
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StubResult {
    /// Report success with this many figures written.
    Render(usize),
    /// Report a script exception.
    Fail(String),
    /// Report success without producing any figure.
    Silent,
    /// Never report anything.
    Hang,
    /// Emit non-protocol output.
    Garbage(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StubAction {
    pub delay: Duration,
    pub result: StubResult,
}

impl StubAction {
    pub fn now(result: StubResult) -> Self {
        Self { delay: Duration::ZERO, result }
    }

    pub fn after(delay: Duration, result: StubResult) -> Self {
        Self { delay, result }
    }
}

type Behavior = dyn Fn(&SandboxJob) -> StubAction + Send + Sync;

#[derive(Clone)]
pub struct StubTransport {
    behavior: Arc<Behavior>,
}

impl std::fmt::Debug for StubTransport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("StubTransport")
    }
}

impl StubTransport {
    pub fn new<F>(behavior: F) -> Self
    where
        F: Fn(&SandboxJob) -> StubAction + Send + Sync + 'static,
    {
        Self { behavior: Arc::new(behavior) }
    }

    pub fn always(result: StubResult) -> Self {
        Self::new(move |_| StubAction::now(result.clone()))
    }

    /// Reads `# stub: ...` comment directives from the script; renders one
    /// figure when there are none. Directives:
    /// `figures N`, `fail <message>`, `silent`, `hang`, `garbage <text>`,
    /// `delay <ms>` (combinable with the others).
    pub fn markers() -> Self {
        Self::new(|job| action_from_markers(&job.script))
    }
}

static DIRECTIVE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^[ \t]*#[ \t]*stub:[ \t]*(\w+)[ \t]*(.*?)[ \t]*\r?$").unwrap());

pub fn action_from_markers(script: &str) -> StubAction {
    let mut action = StubAction::now(StubResult::Render(1));
    for cap in DIRECTIVE.captures_iter(script) {
        let arg = cap[2].to_string();
        match &cap[1] {
            "figures" => action.result = StubResult::Render(arg.parse().unwrap_or(1)),
            "fail" => action.result = StubResult::Fail(if arg.is_empty() { "RuntimeError: stub failure".into() } else { arg }),
            "silent" => action.result = StubResult::Silent,
            "hang" => action.result = StubResult::Hang,
            "garbage" => action.result = StubResult::Garbage(arg),
            "delay" => action.delay = Duration::from_millis(arg.parse().unwrap_or(0)),
            _ => {}
        }
    }
    action
}

impl RunnerTransport for StubTransport {
    fn launch(&self, job: &SandboxJob) -> Result<Box<dyn RunHandle>, TransportError> {
        let action = (self.behavior)(job);
        let cancelled = Arc::new(AtomicBool::new(false));
        let (tx, rx) = mpsc::channel();
        let figure_dir = job.figure_dir.clone();
        let flag = cancelled.clone();
        thread::spawn(move || {
            let until = Instant::now() + action.delay;
            while Instant::now() < until || action.result == StubResult::Hang {
                if flag.load(Ordering::Relaxed) {
                    return;
                }
                thread::sleep(Duration::from_millis(5));
            }
            let raw = match action.result {
                StubResult::Render(n) => {
                    let mut figures = Vec::new();
                    for i in 1..=n {
                        let name = format!("fig_{i}.png");
                        if fs::write(figure_dir.join(&name), STUB_PNG).is_ok() {
                            figures.push(name.into());
                        }
                    }
                    RawResult::Ok { figures }
                }
                StubResult::Fail(traceback) => RawResult::Error { traceback },
                StubResult::Silent => RawResult::Ok { figures: Vec::new() },
                StubResult::Garbage(raw) => RawResult::Violation { raw },
                StubResult::Hang => unreachable!("hang loops until cancelled"),
            };
            let _ = tx.send(raw);
        });
        Ok(Box::new(StubHandle { rx, cancelled, done: false }))
    }
}

struct StubHandle {
    rx: Receiver<RawResult>,
    cancelled: Arc<AtomicBool>,
    done: bool,
}

impl RunHandle for StubHandle {
    fn wait(&mut self, timeout: Duration) -> Option<RawResult> {
        if self.done {
            return None;
        }
        match self.rx.recv_timeout(timeout) {
            Ok(raw) => {
                self.done = true;
                Some(raw)
            }
            Err(RecvTimeoutError::Timeout) => None,
            Err(RecvTimeoutError::Disconnected) => {
                self.done = true;
                Some(RawResult::Violation { raw: "stub runner exited without a result".into() })
            }
        }
    }

    fn kill(&mut self) {
        self.cancelled.store(true, Ordering::Relaxed);
        self.done = true;
    }
}

impl Drop for StubHandle {
    fn drop(&mut self) {
        self.cancelled.store(true, Ordering::Relaxed);
    }
}
