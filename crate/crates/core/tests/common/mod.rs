#![allow(dead_code)]

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use routegen_core::backend::{GenerationRequest, GenerationResponse, MockBackend};
use routegen_core::corpus::{load_benchmark, Benchmark, RecordFormat, Task};
use routegen_core::sandbox::{ExecutionJob, ExecutionVerdict, FnExecutor, VerdictStatus};
use serde_json::Value;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn read_json(name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(fixture(name)).unwrap()).unwrap()
}

pub fn three_tasks() -> Benchmark {
    load_benchmark(&fixture("three_tasks.jsonl"), RecordFormat::JsonLines).unwrap()
}

pub fn sample_tasks() -> Benchmark {
    load_benchmark(&fixture("humaneval_sample.jsonl"), RecordFormat::JsonLines).unwrap()
}

/// Entry point -> recorded classifier reply.
pub fn classifier_replies() -> HashMap<String, String> {
    read_json("classifier_replies.json")
        .as_object()
        .unwrap()
        .iter()
        .map(|(k, v)| (k.clone(), v["reply"].as_str().unwrap().to_string()))
        .collect()
}

fn words(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

/// The task whose entry point is defined in `prompt`. Exemplar functions
/// never share names with fixture tasks.
fn task_in<'a>(tasks: &'a [Task], prompt: &str) -> &'a Task {
    tasks
        .iter()
        .find(|t| prompt.contains(&format!("def {}(", t.entry_point)))
        .unwrap_or_else(|| panic!("no fixture task in prompt"))
}

pub fn correct_program(task: &Task) -> String {
    format!("{}{}", task.prompt.trim_start(), task.canonical_solution.as_deref().unwrap())
}

pub fn wrong_program(task: &Task) -> String {
    let sig = task.prompt.lines().find(|l| l.starts_with("def ")).unwrap();
    format!("{sig}\n    return None\n")
}

/// A deterministic stand-in for a model: each reply is a pure function of the
/// request. Classifier prompts get the recorded replies; stage-1 prompts get
/// well-formed traces; stage-2 and direct prompts get a mix of correct,
/// wrong and code-free answers.
pub fn fixture_backend(id: &str, tasks: Vec<Task>) -> MockBackend {
    let replies = classifier_replies();
    let backend_id = id.to_string();
    MockBackend::from_fn(id, move |req: &GenerationRequest| {
        let id = backend_id.as_str();
        let task = task_in(&tasks, &req.prompt_text);
        let n = req.n as usize;
        let prompt_tokens = words(&req.prompt_text);
        let texts: Vec<String> = if req.prompt_text.contains("Classify the problem") {
            vec![replies
                .get(&task.entry_point)
                .cloned()
                .unwrap_or_else(|| "Complex, because it is unfamiliar.".into())]
        } else if req.prompt_text.contains("may contain errors") {
            let body = if req.call_ordinal % 2 == 1 {
                correct_program(task)
            } else {
                wrong_program(task)
            };
            vec![format!("```python\n{body}```")]
        } else if req.prompt_text.contains("structured solving process") {
            (1..=n)
                .map(|i| {
                    format!(
                        "1: Specification:\n  - Input: see `{}`. Sample {i}.\n2: Idea:\n  - Implement it directly. O(n)",
                        task.entry_point
                    )
                })
                .collect()
        } else {
            (0..n)
                .map(|i| match i % 4 {
                    0 | 1 => correct_program(task),
                    2 => wrong_program(task),
                    _ => "I am not sure how to solve this.".to_string(),
                })
                .collect()
        };
        let completion_tokens = texts.iter().map(|t| words(t).min(req.max_new_tokens as u64)).collect();
        Ok(GenerationResponse::new(texts, prompt_tokens, completion_tokens, id))
    })
}

/// Passes a job iff it contains the task's canonical solution body.
pub fn oracle_executor(tasks: &[Task]) -> FnExecutor<impl Fn(&ExecutionJob) -> ExecutionVerdict + Send + Sync> {
    let canon: Vec<(String, String)> = tasks
        .iter()
        .map(|t| (t.entry_point.clone(), t.canonical_solution.clone().unwrap()))
        .collect();
    FnExecutor(move |job: &ExecutionJob| {
        let (_, body) = canon.iter().find(|(e, _)| *e == job.entry_point).expect("known entry point");
        let status = if job.code.contains(body.trim_end()) {
            VerdictStatus::Pass
        } else {
            VerdictStatus::Fail
        };
        ExecutionVerdict::new(status, "")
    })
}
