use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver};
use std::thread;
use std::time::{Duration, Instant};

use super::transport::{decode_result, encode_job, RawResult, RunHandle, RunnerTransport, SandboxJob, TransportError};

const STDERR_TAIL: usize = 2000;

/// Spawns the external runner executable once per job and speaks the
/// stdin/stdout JSON protocol with it.
#[derive(Debug, Clone)]
pub struct ProcessTransport {
    program: PathBuf,
    args: Vec<String>,
}

impl ProcessTransport {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        Self { program: program.into(), args: Vec::new() }
    }

    /// `command[0]` is the program, the rest are its arguments.
    pub fn from_command(command: &[String]) -> Result<Self, TransportError> {
        let (program, args) = command.split_first().ok_or_else(|| TransportError::Unavailable("empty runner command".into()))?;
        Ok(Self { program: program.into(), args: args.to_vec() })
    }

    pub fn arg(mut self, arg: impl Into<String>) -> Self {
        self.args.push(arg.into());
        self
    }
}

impl RunnerTransport for ProcessTransport {
    fn launch(&self, job: &SandboxJob) -> Result<Box<dyn RunHandle>, TransportError> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .current_dir(&job.work_dir)
            .env("MPLBACKEND", "Agg")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied => {
                    TransportError::Unavailable(format!("{}: {e}", self.program.display()))
                }
                _ => TransportError::Io(e),
            })?;

        let payload = encode_job(job);
        let mut stdin = child.stdin.take().expect("stdin is piped");
        // A runner that exits without reading stdin closes the pipe; that
        // surfaces later as a protocol violation, so write errors are dropped.
        thread::spawn(move || {
            let _ = stdin.write_all(payload.as_bytes());
        });
        let stdout = collect(child.stdout.take().expect("stdout is piped"));
        let stderr = collect(child.stderr.take().expect("stderr is piped"));
        Ok(Box::new(ProcessHandle { child, stdout, stderr, done: false }))
    }
}

fn collect(mut pipe: impl Read + Send + 'static) -> Receiver<Vec<u8>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = pipe.read_to_end(&mut buf);
        let _ = tx.send(buf);
    });
    rx
}

struct ProcessHandle {
    child: Child,
    stdout: Receiver<Vec<u8>>,
    stderr: Receiver<Vec<u8>>,
    done: bool,
}

impl RunHandle for ProcessHandle {
    fn wait(&mut self, timeout: Duration) -> Option<RawResult> {
        if self.done {
            return None;
        }
        let deadline = Instant::now() + timeout;
        let status = loop {
            match self.child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) if Instant::now() >= deadline => return None,
                Ok(None) => thread::sleep(Duration::from_millis(10)),
                Err(e) => {
                    self.done = true;
                    return Some(RawResult::Violation { raw: format!("could not wait for runner: {e}") });
                }
            }
        };
        self.done = true;
        // Grandchildren may hold the pipes open; do not block on them forever.
        let stdout = self.stdout.recv_timeout(Duration::from_secs(1)).unwrap_or_default();
        let result = decode_result(&stdout);
        if let RawResult::Violation { raw } = result {
            let stderr = self.stderr.recv_timeout(Duration::from_millis(200)).unwrap_or_default();
            let stderr = String::from_utf8_lossy(&stderr);
            let tail: String = {
                let chars: Vec<char> = stderr.chars().collect();
                chars[chars.len().saturating_sub(STDERR_TAIL)..].iter().collect()
            };
            let mut raw = format!("runner exited with {status}; stdout: {raw:?}");
            if !tail.trim().is_empty() {
                raw.push_str(&format!("\nstderr:\n{tail}"));
            }
            return Some(RawResult::Violation { raw });
        }
        Some(result)
    }

    fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
        self.done = true;
    }
}

impl Drop for ProcessHandle {
    fn drop(&mut self) {
        if !self.done {
            self.kill();
        }
    }
}
