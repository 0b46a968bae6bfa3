//! Run orchestration.
//!
//! A run walks every task of one benchmark through route, generate and
//! evaluate. Each completed stage is appended to `events.jsonl` in the
//! output directory under a cache key chained from the previous stage's key
//! and the config fields that stage depends on. Restarting a run reuses every
//! stage whose key is already in the log, so an interrupted run resumes where
//! it stopped and a config change recomputes exactly the stale stages.
//!
//! The resulting [`RunRecord`] carries a digest over its content (verdict
//! wall times excluded), so two replayed runs can be compared by digest.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{Backend, BackendConfig, BackendError, HttpBackend, ReplayBackend, ReplayStore};
use crate::corpus::{self, Benchmark, CorpusError, RecordFormat, Task};
use crate::evaluator::{aggregate, evaluate_task, BenchmarkScore, EvalOptions, TaskEvaluation};
use crate::generator::{generate, GenContext, GenerationResult, SamplingConfig};
use crate::ledger::{run_totals, task_cost, RunTotals, TaskCost, TokenRecord};
use crate::pool::bounded_map;
use crate::prompts::{Ablation, PromptError, TemplateSet};
use crate::router::{classify, summarize, RoutingDecision, RoutingMode, RoutingSummary, Strategy};
use crate::sandbox::{Executor, ProcessExecutor, DEFAULT_MEMORY_LIMIT_MB, DEFAULT_TIMEOUT_S};

pub const EVENT_LOG: &str = "events.jsonl";
pub const RECORD_FILE: &str = "record.json";
pub const REPLAY_STORE: &str = "replay.jsonl";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("event log {path}, line {line}: {message}")]
    EventLog { path: String, line: usize, message: String },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// How each task's strategy is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    ExternalClassifier,
    SelfRouting,
    ExternalLabel,
    /// Baseline: every task gets direct few-shot generation.
    ForcedDirect,
    /// Baseline: every task gets ICoT.
    ForcedIcot,
}

impl RunMode {
    pub fn routing(self) -> Option<RoutingMode> {
        match self {
            RunMode::ExternalClassifier => Some(RoutingMode::ExternalClassifier),
            RunMode::SelfRouting => Some(RoutingMode::SelfRouting),
            RunMode::ExternalLabel => Some(RoutingMode::ExternalLabel),
            RunMode::ForcedDirect | RunMode::ForcedIcot => None,
        }
    }

    pub fn forced(self) -> Option<Strategy> {
        match self {
            RunMode::ForcedDirect => Some(Strategy::Direct),
            RunMode::ForcedIcot => Some(Strategy::Icot),
            _ => None,
        }
    }
}

impl FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        match norm.as_str() {
            "forced_direct" | "direct" => Ok(RunMode::ForcedDirect),
            "forced_icot" | "icot" => Ok(RunMode::ForcedIcot),
            "routed" => Ok(RunMode::ExternalClassifier),
            other => match RoutingMode::from_str(other)? {
                RoutingMode::ExternalClassifier => Ok(RunMode::ExternalClassifier),
                RoutingMode::SelfRouting => Ok(RunMode::SelfRouting),
                RoutingMode::ExternalLabel => Ok(RunMode::ExternalLabel),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplaySetting {
    /// Call the endpoints directly.
    #[default]
    Live,
    /// Call the endpoints and record every response.
    Record,
    /// Serve every response from the store; never touch the network.
    Replay,
}

impl FromStr for ReplaySetting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "live" => Ok(ReplaySetting::Live),
            "record" => Ok(ReplaySetting::Record),
            "replay" => Ok(ReplaySetting::Replay),
            other => Err(format!("unknown replay mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplayConfig {
    pub mode: ReplaySetting,
    /// Defaults to `replay.jsonl` in the output directory.
    pub store: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SandboxConfig {
    /// Runner command line; the job goes to its stdin.
    pub runner: Vec<String>,
    pub workers: usize,
    pub timeout_s: f64,
    pub memory_limit_mb: u64,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            runner: Vec::new(),
            workers: 4,
            timeout_s: DEFAULT_TIMEOUT_S,
            memory_limit_mb: DEFAULT_MEMORY_LIMIT_MB,
        }
    }
}

impl SandboxConfig {
    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            workers: self.workers,
            timeout_s: self.timeout_s,
            memory_limit_mb: self.memory_limit_mb,
        }
    }
}

fn default_ks() -> Vec<u64> {
    vec![1]
}

fn default_task_workers() -> usize {
    4
}

fn default_stage2_workers() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Row label in reports.
    pub name: String,
    pub benchmark: PathBuf,
    /// Optional difficulty labels for `external_label` mode.
    #[serde(default)]
    pub labels: Option<PathBuf>,
    #[serde(default = "default_mode")]
    pub mode: RunMode,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub generator: Option<BackendConfig>,
    #[serde(default)]
    pub classifier: Option<BackendConfig>,
    #[serde(default)]
    pub sandbox: SandboxConfig,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub replay: ReplayConfig,
    #[serde(default = "default_ks")]
    pub ks: Vec<u64>,
    #[serde(default = "default_task_workers")]
    pub task_workers: usize,
    #[serde(default = "default_stage2_workers")]
    pub stage2_workers: usize,
    /// Directory of template overrides.
    #[serde(default)]
    pub templates: Option<PathBuf>,
}

fn default_mode() -> RunMode {
    RunMode::ExternalClassifier
}

impl RunConfig {
    pub fn new(name: &str, benchmark: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            name: name.to_string(),
            benchmark: benchmark.into(),
            labels: None,
            mode: default_mode(),
            ablation: Ablation::Full,
            sampling: SamplingConfig::default(),
            generator: None,
            classifier: None,
            sandbox: SandboxConfig::default(),
            output_dir: output_dir.into(),
            replay: ReplayConfig::default(),
            ks: default_ks(),
            task_workers: default_task_workers(),
            stage2_workers: default_stage2_workers(),
            templates: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Loads a TOML config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.benchmark);
        fix(&mut cfg.output_dir);
        for p in [&mut cfg.labels, &mut cfg.replay.store, &mut cfg.templates].into_iter().flatten() {
            fix(p);
        }
        Ok(cfg)
    }

    pub fn replay_store_path(&self) -> PathBuf {
        self.replay
            .store
            .clone()
            .unwrap_or_else(|| self.output_dir.join(REPLAY_STORE))
    }

    /// Checks everything that can be checked without touching the network.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.name.trim().is_empty() {
            return bad("name must not be empty".into());
        }
        self.sampling.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.ks.is_empty() || self.ks.contains(&0) {
            return bad("ks must be a non-empty list of positive integers".into());
        }
        if let Some(&k) = self.ks.iter().find(|&&k| k > self.sampling.n as u64) {
            return bad(format!("k = {k} exceeds n = {}", self.sampling.n));
        }
        if self.mode == RunMode::ExternalClassifier && self.classifier.is_none() {
            return bad("external_classifier mode needs a [classifier] section".into());
        }
        if self.sandbox.timeout_s.is_nan() || self.sandbox.timeout_s <= 0.0 {
            return bad("sandbox.timeout_s must be positive".into());
        }
        if self.replay.mode == ReplaySetting::Replay && !self.replay_store_path().exists() {
            return bad(format!(
                "replay mode needs an existing store at {}",
                self.replay_store_path().display()
            ));
        }
        Ok(())
    }
}

/// The config fields that determine results; paths are left out so a run
/// copied elsewhere keeps its digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub name: String,
    pub mode: RunMode,
    pub ablation: Ablation,
    pub sampling: SamplingConfig,
    pub generator_model: Option<String>,
    pub classifier_model: Option<String>,
    pub ks: Vec<u64>,
    pub templates: String,
}

/// How far to take each task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum StageLimit {
    Route,
    Generate,
    Evaluate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageName {
    Route,
    Generate,
    Evaluate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Routed {
        task_id: String,
        key: String,
        strategy: Strategy,
        /// `None` under forced modes.
        decision: Option<RoutingDecision>,
        transcript: Vec<TokenRecord>,
    },
    Generated {
        task_id: String,
        key: String,
        result: GenerationResult,
    },
    Evaluated {
        task_id: String,
        key: String,
        evaluation: TaskEvaluation,
    },
    Failed {
        task_id: String,
        key: String,
        stage: StageName,
        error: String,
    },
}

impl Event {
    pub fn key(&self) -> &str {
        match self {
            Event::Routed { key, .. }
            | Event::Generated { key, .. }
            | Event::Evaluated { key, .. }
            | Event::Failed { key, .. } => key,
        }
    }

    pub fn task_id(&self) -> &str {
        match self {
            Event::Routed { task_id, .. }
            | Event::Generated { task_id, .. }
            | Event::Evaluated { task_id, .. }
            | Event::Failed { task_id, .. } => task_id,
        }
    }

    fn is_completion(&self) -> bool {
        !matches!(self, Event::Failed { .. })
    }
}

/// Append-only event file; appends are serialized.
pub struct EventLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl EventLog {
    pub fn open(path: &Path) -> Result<Self, PipelineError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| io_err(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file: Mutex::new(file),
        })
    }

    pub fn append(&self, event: &Event) -> Result<(), PipelineError> {
        let mut line = serde_json::to_string(event).map_err(|e| io_err(&self.path, e))?;
        line.push('\n');
        let mut f = self.file.lock().expect("event log poisoned");
        f.write_all(line.as_bytes()).map_err(|e| io_err(&self.path, e))?;
        f.flush().map_err(|e| io_err(&self.path, e))
    }

    /// Reads all events. A torn final line (crash mid-append) is dropped;
    /// corruption anywhere else is an error.
    pub fn read(path: &Path) -> Result<Vec<Event>, PipelineError> {
        if !path.exists() {
            return Ok(Vec::new());
        }
        let file = File::open(path).map_err(|e| io_err(path, e))?;
        let lines: Vec<String> = BufReader::new(file)
            .lines()
            .collect::<Result<_, _>>()
            .map_err(|e| io_err(path, e))?;
        let last = lines.iter().rposition(|l| !l.trim().is_empty());
        let mut events = Vec::new();
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Event>(line) {
                Ok(e) => events.push(e),
                Err(_) if Some(i) == last => {
                    log::warn!("{}: ignoring torn final line {}", path.display(), i + 1);
                }
                Err(e) => {
                    return Err(PipelineError::EventLog {
                        path: path.display().to_string(),
                        line: i + 1,
                        message: e.to_string(),
                    })
                }
            }
        }
        Ok(events)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub strategy: Option<Strategy>,
    pub decision: Option<RoutingDecision>,
    pub routing_transcript: Vec<TokenRecord>,
    pub generation: Option<GenerationResult>,
    pub evaluation: Option<TaskEvaluation>,
    pub cost: Option<TaskCost>,
    pub error: Option<String>,
}

impl TaskRecord {
    fn new(task_id: &str) -> Self {
        Self {
            task_id: task_id.to_string(),
            strategy: None,
            decision: None,
            routing_transcript: Vec::new(),
            generation: None,
            evaluation: None,
            cost: None,
            error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub settings: RunSettings,
    pub benchmark: String,
    /// In benchmark order, one per task.
    pub tasks: Vec<TaskRecord>,
    pub scores: Vec<BenchmarkScore>,
    pub evaluated: usize,
    pub totals: RunTotals,
    pub routing: Option<RoutingSummary>,
    pub failures: usize,
    pub digest: String,
}

impl RunRecord {
    pub fn score(&self, k: u64) -> Option<&BenchmarkScore> {
        self.scores.iter().find(|s| s.k == k)
    }

    /// Recomputes the content digest.
    pub fn compute_digest(&self) -> String {
        let mut v = serde_json::to_value(self).expect("record serializes");
        v.as_object_mut().expect("record is an object").remove("digest");
        strip_key(&mut v, "wall_time_s");
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| io_err(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| io_err(path, e))?;
        fs::write(path, text + "\n").map_err(|e| io_err(path, e))
    }
}

fn strip_key(v: &mut Value, key: &str) {
    match v {
        Value::Object(m) => {
            m.remove(key);
            m.values_mut().for_each(|x| strip_key(x, key));
        }
        Value::Array(a) => a.iter_mut().for_each(|x| strip_key(x, key)),
        _ => {}
    }
}

/// Hex sha256 of a JSON value's canonical text (object keys sorted).
pub fn digest_value(v: &Value) -> String {
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

pub struct RunOutcome {
    pub record: RunRecord,
    /// Stages computed in this invocation, as opposed to reused from the log.
    pub computed: usize,
}

impl RunOutcome {
    /// 0 when every task completed, 1 when some failed.
    pub fn exit_code(&self) -> i32 {
        if self.record.failures == 0 {
            0
        } else {
            1
        }
    }
}

/// A configured run with its backends and executor resolved.
pub struct Pipeline {
    config: RunConfig,
    benchmark: Benchmark,
    templates: TemplateSet,
    classifier: Option<Arc<dyn Backend>>,
    generator: Option<Arc<dyn Backend>>,
    executor: Option<(String, Arc<dyn Executor>)>,
}

impl Pipeline {
    /// Wires explicit components; used by tests and embedders.
    pub fn new(config: RunConfig, benchmark: Benchmark) -> Self {
        Self {
            config,
            benchmark,
            templates: TemplateSet::default(),
            classifier: None,
            generator: None,
            executor: None,
        }
    }

    pub fn with_templates(mut self, templates: TemplateSet) -> Self {
        self.templates = templates;
        self
    }

    pub fn with_generator(mut self, backend: Arc<dyn Backend>) -> Self {
        self.generator = Some(backend);
        self
    }

    pub fn with_classifier(mut self, backend: Arc<dyn Backend>) -> Self {
        self.classifier = Some(backend);
        self
    }

    /// `id` names the executor in evaluation cache keys.
    pub fn with_executor(mut self, id: &str, executor: Arc<dyn Executor>) -> Self {
        self.executor = Some((id.to_string(), executor));
        self
    }

    /// Loads the benchmark, labels and templates and builds the HTTP,
    /// replay and runner components the config names.
    pub fn from_config(config: RunConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let mut benchmark = corpus::load_benchmark(&config.benchmark, RecordFormat::from_path(&config.benchmark))?;
        if let Some(path) = &config.labels {
            benchmark = corpus::attach_external_labels(benchmark, &corpus::load_labels(path)?)?;
        }
        let templates = match &config.templates {
            Some(dir) => TemplateSet::load_dir(dir)?,
            None => TemplateSet::default(),
        };
        let store = match config.replay.mode {
            ReplaySetting::Live => None,
            _ => Some(Arc::new(ReplayStore::open(config.replay_store_path())?)),
        };
        let build = |bc: &BackendConfig| -> Result<Arc<dyn Backend>, PipelineError> {
            Ok(match (&store, config.replay.mode) {
                (Some(s), ReplaySetting::Replay) => Arc::new(ReplayBackend::replay(bc.model.clone(), s.clone())),
                (Some(s), _) => Arc::new(ReplayBackend::record(Box::new(HttpBackend::new(bc.clone())?), s.clone())),
                (None, _) => Arc::new(HttpBackend::new(bc.clone())?),
            })
        };
        let generator = config.generator.as_ref().map(&build).transpose()?;
        let classifier = config.classifier.as_ref().map(&build).transpose()?;
        let executor: Option<(String, Arc<dyn Executor>)> = match config.sandbox.runner.split_first() {
            Some((program, args)) => Some((
                config.sandbox.runner.join(" "),
                Arc::new(ProcessExecutor::new(program).with_args(args.iter().cloned())),
            )),
            None => None,
        };
        Ok(Self {
            config,
            benchmark,
            templates,
            classifier,
            generator,
            executor,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn benchmark(&self) -> &Benchmark {
        &self.benchmark
    }

    fn routing_backend(&self) -> Option<&dyn Backend> {
        match self.config.mode {
            RunMode::SelfRouting => self.generator.as_deref(),
            RunMode::ExternalClassifier => self.classifier.as_deref(),
            _ => None,
        }
    }

    pub fn settings(&self) -> RunSettings {
        RunSettings {
            name: self.config.name.clone(),
            mode: self.config.mode,
            ablation: self.config.ablation,
            sampling: self.config.sampling.clone(),
            generator_model: self.generator.as_ref().map(|b| b.id().to_string()),
            classifier_model: self.routing_backend().map(|b| b.id().to_string()),
            ks: self.config.ks.clone(),
            templates: self.templates.fingerprint(),
        }
    }

    fn check_components(&self, limit: StageLimit) -> Result<(), PipelineError> {
        if self.config.mode.routing().is_some_and(RoutingMode::needs_backend) && self.routing_backend().is_none() {
            return Err(PipelineError::Config(format!("{:?} mode needs a classifier backend", self.config.mode)));
        }
        if self.config.mode == RunMode::ExternalLabel {
            if let Some(t) = self.benchmark.tasks.iter().find(|t| t.external_label.is_none()) {
                return Err(PipelineError::Config(format!("task `{}` has no external label", t.task_id)));
            }
        }
        if limit >= StageLimit::Generate && self.generator.is_none() {
            return Err(PipelineError::Config("generation needs a [generator] backend".into()));
        }
        if limit >= StageLimit::Evaluate {
            if self.executor.is_none() {
                return Err(PipelineError::Config("evaluation needs sandbox.runner".into()));
            }
            if let Some(t) = self.benchmark.tasks.iter().find(|t| !t.has_tests()) {
                return Err(PipelineError::Config(format!("task `{}` has no test suite", t.task_id)));
            }
        }
        Ok(())
    }

    fn route_key(&self, task: &Task) -> String {
        digest_value(&json!({
            "stage": "route",
            "task_id": task.task_id,
            "prompt": task.prompt,
            "mode": self.config.mode,
            "classifier": self.routing_backend().map(|b| b.id()),
            "external_label": task.external_label,
            "templates": self.templates.fingerprint(),
        }))
    }

    fn generate_key(&self, task: &Task, route_key: &str, strategy: Strategy) -> String {
        digest_value(&json!({
            "stage": "generate",
            "task_id": task.task_id,
            "prev": route_key,
            "strategy": strategy,
            "sampling": self.config.sampling,
            "ablation": self.config.ablation,
            "generator": self.generator.as_ref().map(|b| b.id().to_string()),
            "templates": self.templates.fingerprint(),
        }))
    }

    fn evaluate_key(&self, task: &Task, generate_key: &str) -> String {
        let s = &self.config.sandbox;
        digest_value(&json!({
            "stage": "evaluate",
            "task_id": task.task_id,
            "prev": generate_key,
            "test": task.test_suite,
            "entry_point": task.entry_point,
            "executor": self.executor.as_ref().map(|e| e.0.clone()),
            "timeout_s": s.timeout_s,
            "memory_limit_mb": s.memory_limit_mb,
        }))
    }

    pub fn event_log_path(&self) -> PathBuf {
        self.config.output_dir.join(EVENT_LOG)
    }

    /// Runs every task up to `limit`, reusing logged stages, and writes the
    /// run record to the output directory.
    pub fn run(&self, limit: StageLimit) -> Result<RunOutcome, PipelineError> {
        self.check_components(limit)?;
        let log_path = self.event_log_path();
        let mut prior: HashMap<String, Event> = HashMap::new();
        for e in EventLog::read(&log_path)? {
            if e.is_completion() {
                prior.insert(e.key().to_string(), e);
            }
        }
        let log = EventLog::open(&log_path)?;
        let computed = std::sync::atomic::AtomicUsize::new(0);

        let tasks = &self.benchmark.tasks;
        let results = bounded_map(tasks, self.config.task_workers, |_, task| {
            self.process(task, limit, &prior, &log, &computed)
        });
        let tasks = results.into_iter().collect::<Result<Vec<_>, _>>()?;
        let record = self.fold(tasks)?;
        fs::create_dir_all(&self.config.output_dir).map_err(|e| io_err(&self.config.output_dir, e))?;
        record.save(&self.config.output_dir.join(RECORD_FILE))?;
        Ok(RunOutcome {
            record,
            computed: computed.into_inner(),
        })
    }

    fn process(
        &self,
        task: &Task,
        limit: StageLimit,
        prior: &HashMap<String, Event>,
        log: &EventLog,
        computed: &std::sync::atomic::AtomicUsize,
    ) -> Result<TaskRecord, PipelineError> {
        use std::sync::atomic::Ordering::Relaxed;
        let mut rec = TaskRecord::new(&task.task_id);
        let fail = |rec: &mut TaskRecord, key: &str, stage: StageName, error: String| -> Result<(), PipelineError> {
            log::warn!("task {}: {stage:?} failed: {error}", task.task_id);
            log.append(&Event::Failed {
                task_id: task.task_id.clone(),
                key: key.to_string(),
                stage,
                error: error.clone(),
            })?;
            rec.error = Some(error);
            Ok(())
        };

        // Route.
        let route_key = self.route_key(task);
        let routed = match prior.get(&route_key) {
            Some(e) => e.clone(),
            None => {
                let event = match self.config.mode.forced() {
                    Some(strategy) => Ok(Event::Routed {
                        task_id: task.task_id.clone(),
                        key: route_key.clone(),
                        strategy,
                        decision: None,
                        transcript: Vec::new(),
                    }),
                    None => {
                        let mode = self.config.mode.routing().expect("non-forced mode routes");
                        classify(task, self.routing_backend(), mode, &self.templates).map(|c| Event::Routed {
                            task_id: task.task_id.clone(),
                            key: route_key.clone(),
                            strategy: c.decision.strategy(),
                            decision: Some(c.decision),
                            transcript: c.transcript,
                        })
                    }
                };
                match event {
                    Ok(e) => {
                        log.append(&e)?;
                        computed.fetch_add(1, Relaxed);
                        e
                    }
                    Err(err) => {
                        fail(&mut rec, &route_key, StageName::Route, err.to_string())?;
                        return Ok(rec);
                    }
                }
            }
        };
        let Event::Routed {
            strategy,
            decision,
            transcript,
            ..
        } = routed
        else {
            unreachable!("route key maps to a routed event")
        };
        rec.strategy = Some(strategy);
        rec.decision = decision;
        rec.routing_transcript = transcript;
        if limit == StageLimit::Route {
            rec.cost = Some(TaskCost::routing_only(&task.task_id, &rec.routing_transcript));
            return Ok(rec);
        }

        // Generate.
        let gen_key = self.generate_key(task, &route_key, strategy);
        let result = match prior.get(&gen_key) {
            Some(Event::Generated { result, .. }) => result.clone(),
            _ => {
                let backend = self.generator.as_deref().expect("checked");
                let ctx = GenContext::new(backend, &self.templates, &self.config.sampling)
                    .with_ablation(self.config.ablation)
                    .with_workers(self.config.stage2_workers);
                match generate(task, strategy, &ctx) {
                    Ok(result) => {
                        log.append(&Event::Generated {
                            task_id: task.task_id.clone(),
                            key: gen_key.clone(),
                            result: result.clone(),
                        })?;
                        computed.fetch_add(1, Relaxed);
                        result
                    }
                    Err(err) => {
                        fail(&mut rec, &gen_key, StageName::Generate, err.to_string())?;
                        rec.cost = Some(TaskCost::routing_only(&task.task_id, &rec.routing_transcript));
                        return Ok(rec);
                    }
                }
            }
        };
        let mut transcript = rec.routing_transcript.clone();
        transcript.extend(result.transcript.iter().cloned());
        match task_cost(&task.task_id, &transcript, strategy) {
            Ok(c) => rec.cost = Some(c),
            Err(err) => {
                fail(&mut rec, &gen_key, StageName::Generate, err.to_string())?;
                return Ok(rec);
            }
        }
        rec.generation = Some(result);
        if limit == StageLimit::Generate {
            return Ok(rec);
        }

        // Evaluate.
        let eval_key = self.evaluate_key(task, &gen_key);
        let evaluation = match prior.get(&eval_key) {
            Some(Event::Evaluated { evaluation, .. }) => evaluation.clone(),
            _ => {
                let (_, executor) = self.executor.as_ref().expect("checked");
                let ev = evaluate_task(
                    task,
                    rec.generation.as_ref().expect("set above"),
                    executor.as_ref(),
                    &self.config.sandbox.eval_options(),
                );
                log.append(&Event::Evaluated {
                    task_id: task.task_id.clone(),
                    key: eval_key,
                    evaluation: ev.clone(),
                })?;
                computed.fetch_add(1, Relaxed);
                ev
            }
        };
        rec.evaluation = Some(evaluation);
        Ok(rec)
    }

    fn fold(&self, tasks: Vec<TaskRecord>) -> Result<RunRecord, PipelineError> {
        let evals: Vec<TaskEvaluation> = tasks.iter().filter_map(|t| t.evaluation.clone()).collect();
        let scores = if evals.is_empty() {
            Vec::new()
        } else {
            self.config
                .ks
                .iter()
                .map(|&k| aggregate(&evals, k))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| PipelineError::Config(e.to_string()))?
        };
        let routing = if self.config.mode.forced().is_some() {
            None
        } else {
            let decisions: Vec<&RoutingDecision> = tasks.iter().filter_map(|t| t.decision.as_ref()).collect();
            Some(summarize(decisions).map_err(|e| PipelineError::Config(e.to_string()))?)
        };
        let totals = run_totals(tasks.iter().filter_map(|t| t.cost.as_ref()));
        let mut record = RunRecord {
            settings: self.settings(),
            benchmark: self.benchmark.name.clone(),
            failures: tasks.iter().filter(|t| t.error.is_some()).count(),
            evaluated: evals.len(),
            tasks,
            scores,
            totals,
            routing,
            digest: String::new(),
        };
        record.digest = record.compute_digest();
        Ok(record)
    }
}
