//! Candidate execution.
//!
//! The runner is an external executable that reads one JSON job from stdin
//! and writes one JSON verdict to stdout, exiting 0 whatever the verdict.
//! [`ProcessExecutor`] drives it with a hard deadline of
//! `timeout_s + grace`; anything else it prints is a protocol error.

use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pool::bounded_map;

pub const DEFAULT_TIMEOUT_S: f64 = 10.0;
pub const DEFAULT_MEMORY_LIMIT_MB: u64 = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionJob {
    pub code: String,
    #[serde(rename = "test")]
    pub test_suite: String,
    pub entry_point: String,
    pub timeout_s: f64,
    pub memory_limit_mb: u64,
}

impl ExecutionJob {
    pub fn new(code: &str, test_suite: &str, entry_point: &str) -> Self {
        Self {
            code: code.to_string(),
            test_suite: test_suite.to_string(),
            entry_point: entry_point.to_string(),
            timeout_s: DEFAULT_TIMEOUT_S,
            memory_limit_mb: DEFAULT_MEMORY_LIMIT_MB,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VerdictStatus {
    #[serde(alias = "pass", alias = "passed")]
    Pass,
    #[serde(alias = "fail", alias = "failed")]
    Fail,
    #[serde(alias = "runtime_error")]
    RuntimeError,
    #[serde(alias = "timeout")]
    Timeout,
    #[serde(alias = "no_code")]
    NoCode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionVerdict {
    pub status: VerdictStatus,
    #[serde(default)]
    pub detail: String,
    #[serde(default)]
    pub wall_time_s: f64,
}

impl ExecutionVerdict {
    pub fn new(status: VerdictStatus, detail: impl Into<String>) -> Self {
        Self {
            status,
            detail: detail.into(),
            wall_time_s: 0.0,
        }
    }

    pub fn passed(&self) -> bool {
        self.status == VerdictStatus::Pass
    }
}

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("runner unavailable: {0}")]
    RunnerUnavailable(String),
    #[error("runner protocol error: {0}")]
    ProtocolError(String),
}

pub trait Executor: Send + Sync {
    fn execute(&self, job: &ExecutionJob) -> Result<ExecutionVerdict, SandboxError>;
}

/// Executes one job. Empty code short-circuits to `NoCode` without touching
/// the executor.
pub fn execute(executor: &dyn Executor, job: &ExecutionJob) -> Result<ExecutionVerdict, SandboxError> {
    if job.code.trim().is_empty() {
        return Ok(ExecutionVerdict::new(VerdictStatus::NoCode, "no code extracted"));
    }
    executor.execute(job)
}

/// Runs `jobs` on at most `workers` concurrent executions. Errors are folded
/// into `RuntimeError` verdicts so one bad job never aborts the batch.
pub fn execute_batch(executor: &dyn Executor, jobs: &[ExecutionJob], workers: usize) -> Vec<ExecutionVerdict> {
    bounded_map(jobs, workers, |_, job| match execute(executor, job) {
        Ok(v) => v,
        Err(e) => ExecutionVerdict::new(VerdictStatus::RuntimeError, e.to_string()),
    })
}

/// Adapts a closure into an [`Executor`]; used to stand in for the runner.
pub struct FnExecutor<F>(pub F);

impl<F> Executor for FnExecutor<F>
where
    F: Fn(&ExecutionJob) -> ExecutionVerdict + Send + Sync,
{
    fn execute(&self, job: &ExecutionJob) -> Result<ExecutionVerdict, SandboxError> {
        Ok((self.0)(job))
    }
}

/// Spawns one runner process per job.
#[derive(Debug, Clone)]
pub struct ProcessExecutor {
    pub program: PathBuf,
    pub args: Vec<String>,
    /// Added to the job timeout before the process is killed.
    pub grace: Duration,
}

impl ProcessExecutor {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        Self {
            program: program.into(),
            args: Vec::new(),
            grace: Duration::from_secs(1),
        }
    }

    pub fn with_args(mut self, args: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.args = args.into_iter().map(Into::into).collect();
        self
    }
}

impl Executor for ProcessExecutor {
    fn execute(&self, job: &ExecutionJob) -> Result<ExecutionVerdict, SandboxError> {
        let payload = serde_json::to_vec(job).map_err(|e| SandboxError::ProtocolError(e.to_string()))?;
        let started = Instant::now();
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| SandboxError::RunnerUnavailable(format!("{}: {e}", self.program.display())))?;

        let mut stdin = child.stdin.take().expect("stdin piped");
        let writer = std::thread::spawn(move || {
            // A runner that exits without reading gives EPIPE; the exit status
            // and stdout decide the outcome.
            let _ = stdin.write_all(&payload);
            let _ = stdin.write_all(b"\n");
        });
        let stdout = drain(child.stdout.take().expect("stdout piped"));
        let stderr = drain(child.stderr.take().expect("stderr piped"));

        let deadline = Duration::from_secs_f64(job.timeout_s.max(0.0)) + self.grace;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break Some(status),
                Ok(None) if started.elapsed() >= deadline => {
                    let _ = child.kill();
                    let _ = child.wait();
                    break None;
                }
                Ok(None) => std::thread::sleep(Duration::from_millis(5)),
                Err(e) => return Err(SandboxError::ProtocolError(format!("wait failed: {e}"))),
            }
        };
        let _ = writer.join();
        let wall = started.elapsed().as_secs_f64();

        let Some(status) = status else {
            return Ok(ExecutionVerdict {
                status: VerdictStatus::Timeout,
                detail: format!("runner killed after {:.1}s", deadline.as_secs_f64()),
                wall_time_s: wall,
            });
        };
        let out = stdout.join().unwrap_or_default();
        let err = stderr.join().unwrap_or_default();
        if !status.success() {
            return Err(SandboxError::ProtocolError(format!(
                "runner exited with {status}: {}",
                tail(&err)
            )));
        }
        parse_verdict(&out)
    }
}

fn drain(mut r: impl Read + Send + 'static) -> std::thread::JoinHandle<String> {
    std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = r.read_to_end(&mut buf);
        String::from_utf8_lossy(&buf).into_owned()
    })
}

fn tail(s: &str) -> &str {
    let s = s.trim_end();
    let start = s.len().saturating_sub(400);
    let start = (start..=s.len()).find(|&i| s.is_char_boundary(i)).unwrap_or(s.len());
    &s[start..]
}

/// Parses runner output: exactly one non-empty line holding a verdict.
pub fn parse_verdict(stdout: &str) -> Result<ExecutionVerdict, SandboxError> {
    let mut lines = stdout.lines().map(str::trim).filter(|l| !l.is_empty());
    let first = lines
        .next()
        .ok_or_else(|| SandboxError::ProtocolError("runner produced no output".into()))?;
    if lines.next().is_some() {
        return Err(SandboxError::ProtocolError("runner produced more than one record".into()));
    }
    serde_json::from_str(first).map_err(|e| SandboxError::ProtocolError(format!("bad verdict record: {e}")))
}
