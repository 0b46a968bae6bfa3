//! Scoring: per-task pass counts and the unbiased pass@k estimator.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Task;
use crate::generator::GenerationResult;
use crate::sandbox::{execute_batch, ExecutionJob, ExecutionVerdict, Executor, DEFAULT_MEMORY_LIMIT_MB, DEFAULT_TIMEOUT_S};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DomainError {
    #[error("k must satisfy 1 <= k <= n (n = {n}, k = {k})")]
    InvalidK { n: u64, k: u64 },
    #[error("c must not exceed n (n = {n}, c = {c})")]
    TooManyPasses { n: u64, c: u64 },
    #[error("task `{task_id}` has {n} candidates, fewer than k = {k}")]
    TooFewCandidates { task_id: String, n: u64, k: u64 },
    #[error("no evaluations to aggregate")]
    Empty,
}

/// Probability that at least one of `k` candidates drawn without replacement
/// from `n`, of which `c` pass, is correct: `1 - C(n-c, k) / C(n, k)`.
///
/// Evaluated as a running product so large `n` never overflows.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64, DomainError> {
    if k < 1 || k > n {
        return Err(DomainError::InvalidK { n, k });
    }
    if c > n {
        return Err(DomainError::TooManyPasses { n, c });
    }
    if n - c < k {
        return Ok(1.0);
    }
    let mut miss = 1.0f64;
    for i in 0..k {
        miss *= (n - c - i) as f64 / (n - i) as f64;
    }
    Ok((1.0 - miss).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEvaluation {
    pub task_id: String,
    pub n: u64,
    pub c: u64,
    pub verdicts: Vec<ExecutionVerdict>,
}

impl TaskEvaluation {
    pub fn from_verdicts(task_id: &str, verdicts: Vec<ExecutionVerdict>) -> Self {
        Self {
            task_id: task_id.to_string(),
            n: verdicts.len() as u64,
            c: verdicts.iter().filter(|v| v.passed()).count() as u64,
            verdicts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub workers: usize,
    pub timeout_s: f64,
    pub memory_limit_mb: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            workers: 4,
            timeout_s: DEFAULT_TIMEOUT_S,
            memory_limit_mb: DEFAULT_MEMORY_LIMIT_MB,
        }
    }
}

/// Import lines of the task prompt, which the candidate may rely on without
/// repeating (e.g. `from typing import List`).
fn prompt_imports(prompt: &str) -> Vec<&str> {
    prompt
        .lines()
        .filter(|l| l.starts_with("import ") || (l.starts_with("from ") && l.contains(" import ")))
        .collect()
}

/// Builds the runner job for one candidate. Prompt imports missing from the
/// code are prepended; empty code stays empty so the job short-circuits.
pub fn job_for(task: &Task, code: &str, opts: &EvalOptions) -> ExecutionJob {
    let mut program = String::new();
    if !code.trim().is_empty() {
        for line in prompt_imports(&task.prompt) {
            if !code.lines().any(|l| l.trim_end() == line.trim_end()) {
                program.push_str(line);
                program.push('\n');
            }
        }
        program.push_str(code);
    }
    let mut job = ExecutionJob::new(&program, &task.test_suite, &task.entry_point);
    job.timeout_s = opts.timeout_s;
    job.memory_limit_mb = opts.memory_limit_mb;
    job
}

/// Runs every candidate against the task's tests. NoCode candidates yield
/// NoCode verdicts; executor failures become RuntimeError verdicts.
pub fn evaluate_task(
    task: &Task,
    result: &GenerationResult,
    executor: &dyn Executor,
    opts: &EvalOptions,
) -> TaskEvaluation {
    let jobs: Vec<ExecutionJob> = result
        .candidates
        .iter()
        .map(|c| job_for(task, if c.no_code { "" } else { &c.code }, opts))
        .collect();
    TaskEvaluation::from_verdicts(&task.task_id, execute_batch(executor, &jobs, opts.workers))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkScore {
    pub k: u64,
    pub per_task: BTreeMap<String, f64>,
    pub mean: f64,
}

/// Per-task pass@k, then the unweighted mean over tasks. Tasks whose
/// candidates all failed to produce code still count, at zero.
pub fn aggregate(evaluations: &[TaskEvaluation], k: u64) -> Result<BenchmarkScore, DomainError> {
    if evaluations.is_empty() {
        return Err(DomainError::Empty);
    }
    let mut per_task = BTreeMap::new();
    for e in evaluations {
        if e.n < k {
            return Err(DomainError::TooFewCandidates {
                task_id: e.task_id.clone(),
                n: e.n,
                k,
            });
        }
        per_task.insert(e.task_id.clone(), pass_at_k(e.n, e.c, k)?);
    }
    // Sum in task-id order so the mean does not depend on input order.
    let mean = per_task.values().sum::<f64>() / per_task.len() as f64;
    Ok(BenchmarkScore { k, per_task, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{Candidate, CandidateOrigin};
    use crate::router::Strategy;
    use crate::sandbox::{FnExecutor, VerdictStatus};

    #[test]
    fn spot_values() {
        assert_eq!(pass_at_k(20, 20, 1).unwrap(), 1.0);
        assert_eq!(pass_at_k(20, 0, 5).unwrap(), 0.0);
        assert!((pass_at_k(5, 2, 1).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(pass_at_k(5, 2, 4).unwrap(), 1.0);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(pass_at_k(5, 2, 6), Err(DomainError::InvalidK { .. })));
        assert!(matches!(pass_at_k(5, 2, 0), Err(DomainError::InvalidK { .. })));
        assert!(matches!(pass_at_k(5, 6, 1), Err(DomainError::TooManyPasses { .. })));
        assert_eq!(aggregate(&[], 1), Err(DomainError::Empty));
    }

    #[test]
    fn large_n_is_finite() {
        let p = pass_at_k(10_000, 37, 100).unwrap();
        assert!(p > 0.0 && p < 1.0);
    }

    fn eval(id: &str, n: u64, c: u64) -> TaskEvaluation {
        TaskEvaluation {
            task_id: id.into(),
            n,
            c,
            verdicts: vec![],
        }
    }

    #[test]
    fn aggregate_means() {
        let s = aggregate(&[eval("a", 1, 1), eval("b", 1, 0)], 1).unwrap();
        assert_eq!(s.mean, 0.5);
        let s = aggregate(&[eval("a", 5, 2)], 1).unwrap();
        assert!((s.mean - 0.4).abs() < 1e-15);
        assert!(matches!(
            aggregate(&[eval("a", 1, 1)], 2),
            Err(DomainError::TooFewCandidates { .. })
        ));
    }

    #[test]
    fn evaluate_counts_passes() {
        let task = Task {
            task_id: "t".into(),
            prompt: "from typing import List\n\ndef f(xs: List[int]):\n".into(),
            entry_point: "f".into(),
            canonical_solution: None,
            test_suite: "def check(candidate): pass".into(),
            external_label: None,
            benchmark: "b".into(),
            extra: Default::default(),
        };
        let cand = |code: &str| Candidate::from_completion("t", CandidateOrigin::Direct, code);
        let result = GenerationResult {
            task_id: "t".into(),
            strategy: Strategy::Direct,
            candidates: vec![
                cand("def f(xs): return 'pass'"),
                cand("def f(xs): return 'fail'"),
                cand("nothing to see"),
                cand("def f(xs): return 'pass'"),
                cand("def f(xs): return 'hang'"),
            ],
            traces: vec![],
            transcript: vec![],
        };
        let exec = FnExecutor(|job: &ExecutionJob| {
            assert!(job.code.starts_with("from typing import List\n"));
            let status = if job.code.contains("'pass'") {
                VerdictStatus::Pass
            } else if job.code.contains("'hang'") {
                VerdictStatus::Timeout
            } else {
                VerdictStatus::Fail
            };
            ExecutionVerdict::new(status, "")
        });
        let e = evaluate_task(&task, &result, &exec, &EvalOptions::default());
        assert_eq!((e.n, e.c), (5, 2));
        let st: Vec<_> = e.verdicts.iter().map(|v| v.status).collect();
        assert_eq!(
            st,
            [
                VerdictStatus::Pass,
                VerdictStatus::Fail,
                VerdictStatus::NoCode,
                VerdictStatus::Pass,
                VerdictStatus::Timeout
            ]
        );
    }
}
