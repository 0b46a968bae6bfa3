//! Benchmark tasks and their on-disk record format.
//!
//! Records are UTF-8 structured objects, one per line (or a single JSON array
//! for [`RecordFormat::JsonArray`]). Required keys: `task_id` (or `name`),
//! `prompt` (or `question`), `entry_point`, `test`. Optional keys:
//! `canonical_solution`, `difficulty`. Any other key is kept verbatim in
//! [`Task::extra`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("record {index}: invalid record: {message}")]
    Decode { index: usize, message: String },
    #[error("record {index}: missing field `{field}`")]
    MissingField { index: usize, field: &'static str },
    #[error("record {index}: field `{field}` must not be empty")]
    EmptyField { index: usize, field: &'static str },
    #[error("duplicate task id `{0}`")]
    DuplicateTaskId(String),
    #[error("benchmark file is empty")]
    EmptyFile,
    #[error("label refers to unknown task id `{0}`")]
    UnknownTaskId(String),
}

/// One benchmark problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    /// Signature plus natural-language description, as shown to the model.
    pub prompt: String,
    pub entry_point: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canonical_solution: Option<String>,
    /// Source defining `check(candidate)`. Empty for routing-only corpora.
    #[serde(default)]
    pub test_suite: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_label: Option<String>,
    #[serde(default)]
    pub benchmark: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, Value>,
}

impl Task {
    /// Encodes the task back into the on-disk record shape.
    pub fn to_record(&self) -> Value {
        let mut map = Map::new();
        for (k, v) in &self.extra {
            map.insert(k.clone(), v.clone());
        }
        map.insert("task_id".into(), Value::String(self.task_id.clone()));
        map.insert("prompt".into(), Value::String(self.prompt.clone()));
        map.insert("entry_point".into(), Value::String(self.entry_point.clone()));
        map.insert("test".into(), Value::String(self.test_suite.clone()));
        if let Some(sol) = &self.canonical_solution {
            map.insert("canonical_solution".into(), Value::String(sol.clone()));
        }
        if let Some(label) = &self.external_label {
            map.insert("difficulty".into(), Value::String(label.clone()));
        }
        Value::Object(map)
    }

    pub fn has_tests(&self) -> bool {
        !self.test_suite.trim().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub name: String,
    pub tasks: Vec<Task>,
}

impl Benchmark {
    pub fn new(name: impl Into<String>, tasks: Vec<Task>) -> Result<Self, CorpusError> {
        if tasks.is_empty() {
            return Err(CorpusError::EmptyFile);
        }
        let mut seen = HashSet::new();
        for t in &tasks {
            if !seen.insert(t.task_id.as_str()) {
                return Err(CorpusError::DuplicateTaskId(t.task_id.clone()));
            }
        }
        Ok(Self {
            name: name.into(),
            tasks,
        })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn get(&self, task_id: &str) -> Option<&Task> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }

    /// Writes the benchmark as line-delimited records.
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for t in &self.tasks {
            serde_json::to_writer(&mut out, &t.to_record())?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordFormat {
    /// One object per line.
    #[default]
    JsonLines,
    /// A single array of objects.
    JsonArray,
}

impl RecordFormat {
    /// Picks a format from the file extension, defaulting to line-delimited.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => RecordFormat::JsonArray,
            _ => RecordFormat::JsonLines,
        }
    }
}

/// Loads a benchmark file. The benchmark name is the file stem.
pub fn load_benchmark(path: &Path, format: RecordFormat) -> Result<Benchmark, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("benchmark")
        .to_string();
    parse_benchmark(&name, &text, format)
}

pub fn parse_benchmark(name: &str, text: &str, format: RecordFormat) -> Result<Benchmark, CorpusError> {
    let records: Vec<Value> = match format {
        RecordFormat::JsonLines => text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(index, line)| {
                serde_json::from_str(line).map_err(|e| CorpusError::Decode {
                    index,
                    message: e.to_string(),
                })
            })
            .collect::<Result<_, _>>()?,
        RecordFormat::JsonArray => {
            if text.trim().is_empty() {
                return Err(CorpusError::EmptyFile);
            }
            serde_json::from_str(text).map_err(|e| CorpusError::Decode {
                index: 0,
                message: e.to_string(),
            })?
        }
    };
    if records.is_empty() {
        return Err(CorpusError::EmptyFile);
    }
    let tasks = records
        .into_iter()
        .enumerate()
        .map(|(index, record)| task_from_record(index, record, name))
        .collect::<Result<Vec<_>, _>>()?;
    Benchmark::new(name, tasks)
}

fn task_from_record(index: usize, record: Value, benchmark: &str) -> Result<Task, CorpusError> {
    let Value::Object(mut map) = record else {
        return Err(CorpusError::Decode {
            index,
            message: "record is not an object".into(),
        });
    };

    let task_id = take_id(&mut map, index)?;
    let prompt = take_string(&mut map, &["prompt", "question"], index, "prompt")?
        .ok_or(CorpusError::MissingField { index, field: "prompt" })?;
    if prompt.is_empty() {
        return Err(CorpusError::EmptyField { index, field: "prompt" });
    }
    let entry_point = take_string(&mut map, &["entry_point"], index, "entry_point")?
        .ok_or(CorpusError::MissingField {
            index,
            field: "entry_point",
        })?;
    let test_suite = take_string(&mut map, &["test"], index, "test")?
        .ok_or(CorpusError::MissingField { index, field: "test" })?;
    let canonical_solution = take_string(&mut map, &["canonical_solution"], index, "canonical_solution")?;
    let external_label = take_string(&mut map, &["difficulty"], index, "difficulty")?;

    Ok(Task {
        task_id,
        prompt,
        entry_point,
        canonical_solution,
        test_suite,
        external_label,
        benchmark: benchmark.to_string(),
        extra: map.into_iter().collect(),
    })
}

fn take_id(map: &mut Map<String, Value>, index: usize) -> Result<String, CorpusError> {
    for key in ["task_id", "name"] {
        match map.remove(key) {
            Some(Value::String(s)) => return Ok(s),
            // MBPP ships integer ids.
            Some(Value::Number(n)) => return Ok(n.to_string()),
            Some(_) => {
                return Err(CorpusError::Decode {
                    index,
                    message: format!("`{key}` must be a string or integer"),
                })
            }
            None => {}
        }
    }
    Err(CorpusError::MissingField { index, field: "task_id" })
}

fn take_string(
    map: &mut Map<String, Value>,
    keys: &[&str],
    index: usize,
    field: &'static str,
) -> Result<Option<String>, CorpusError> {
    for key in keys {
        match map.remove(*key) {
            Some(Value::String(s)) => return Ok(Some(s)),
            Some(Value::Null) | None => {}
            Some(_) => {
                return Err(CorpusError::Decode {
                    index,
                    message: format!("`{field}` must be a string"),
                })
            }
        }
    }
    Ok(None)
}

/// Sets `external_label` on the named tasks. Tasks absent from `labels` are
/// left untouched.
pub fn attach_external_labels(
    mut benchmark: Benchmark,
    labels: &HashMap<String, String>,
) -> Result<Benchmark, CorpusError> {
    let ids: HashSet<&str> = benchmark.tasks.iter().map(|t| t.task_id.as_str()).collect();
    // Report the smallest unknown id so the error is stable.
    let mut unknown: Vec<&String> = labels.keys().filter(|k| !ids.contains(k.as_str())).collect();
    unknown.sort();
    if let Some(id) = unknown.first() {
        return Err(CorpusError::UnknownTaskId((*id).clone()));
    }
    for task in &mut benchmark.tasks {
        if let Some(label) = labels.get(&task.task_id) {
            task.external_label = Some(label.clone());
        }
    }
    Ok(benchmark)
}

/// Reads a label file: either a JSON object `{task_id: label}` or
/// line-delimited `{"task_id": .., "difficulty": ..}` records.
pub fn load_labels(path: &Path) -> Result<HashMap<String, String>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if let Ok(map) = serde_json::from_str::<HashMap<String, String>>(&text) {
        return Ok(map);
    }
    #[derive(Deserialize)]
    struct LabelRecord {
        #[serde(alias = "name")]
        task_id: String,
        #[serde(alias = "label")]
        difficulty: String,
    }
    let mut out = HashMap::new();
    for (index, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let rec: LabelRecord = serde_json::from_str(line).map_err(|e| CorpusError::Decode {
            index,
            message: e.to_string(),
        })?;
        out.insert(rec.task_id, rec.difficulty);
    }
    Ok(out)
}
