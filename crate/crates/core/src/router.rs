//! Difficulty routing.
//!
//! A classifier model labels each task `Simple` or `Complex` with a one-line
//! rationale. `Simple` tasks are answered by direct few-shot sampling,
//! `Complex` ones by the two-stage intention-guided strategy. Labels can also
//! come from the benchmark itself, skipping the classifier call.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{generate_checked, Backend, BackendError, GenerationRequest};
use crate::corpus::Task;
use crate::ledger::{Stage, TokenRecord};
use crate::prompts::{PromptError, TemplateSet};

pub const CLASSIFIER_MAX_NEW_TOKENS: u32 = 128;

#[derive(Debug, Error)]
pub enum RouterError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("task `{0}` has no external difficulty label")]
    MissingExternalLabel(String),
    #[error("more than one decision for task `{0}`")]
    DuplicateDecision(String),
    #[error("summaries cover different task sets (first mismatch: `{0}`)")]
    TaskSetMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DifficultyLabel {
    Simple,
    Complex,
}

impl fmt::Display for DifficultyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DifficultyLabel::Simple => "Simple",
            DifficultyLabel::Complex => "Complex",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    Direct,
    Icot,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Direct => "Direct",
            Strategy::Icot => "ICoT",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RoutingSource {
    ExternalClassifier,
    SelfRouting,
    ExternalLabel,
}

/// Where labels come from. The classifier backend itself is supplied
/// separately; under `SelfRouting` it is the generator backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingMode {
    ExternalClassifier,
    SelfRouting,
    ExternalLabel,
}

impl RoutingMode {
    pub fn source(self) -> RoutingSource {
        match self {
            RoutingMode::ExternalClassifier => RoutingSource::ExternalClassifier,
            RoutingMode::SelfRouting => RoutingSource::SelfRouting,
            RoutingMode::ExternalLabel => RoutingSource::ExternalLabel,
        }
    }

    pub fn needs_backend(self) -> bool {
        self != RoutingMode::ExternalLabel
    }
}

impl FromStr for RoutingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "external_classifier" | "classifier" | "external" => Ok(RoutingMode::ExternalClassifier),
            "self_routing" | "self" => Ok(RoutingMode::SelfRouting),
            "external_label" | "label" | "labels" => Ok(RoutingMode::ExternalLabel),
            other => Err(format!("unknown routing mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub task_id: String,
    #[serde(rename = "routing_result")]
    pub label: DifficultyLabel,
    #[serde(rename = "routing_reason")]
    pub rationale: String,
    pub source: RoutingSource,
    #[serde(default)]
    pub raw_reply: String,
    /// Set when the reply named neither label and `Complex` was assumed.
    #[serde(default)]
    pub parse_failure: bool,
}

impl RoutingDecision {
    pub fn strategy(&self) -> Strategy {
        route(self.label)
    }
}

/// The label fully determines the strategy.
pub fn route(label: DifficultyLabel) -> Strategy {
    match label {
        DifficultyLabel::Simple => Strategy::Direct,
        DifficultyLabel::Complex => Strategy::Icot,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedReply {
    pub label: DifficultyLabel,
    pub rationale: String,
    pub parse_failure: bool,
}

/// Finds the first standalone "simple" or "complex" word, case-insensitively.
/// Neither present means `Complex` with `parse_failure` set.
pub fn parse_label(reply: &str) -> ParsedReply {
    let lower = reply.to_lowercase();
    let mut found = None;
    let mut start = None;
    for (i, ch) in lower.char_indices().chain(std::iter::once((lower.len(), ' '))) {
        if ch.is_alphanumeric() || ch == '_' {
            start.get_or_insert(i);
            continue;
        }
        if let Some(s) = start.take() {
            let label = match &lower[s..i] {
                "simple" => Some(DifficultyLabel::Simple),
                "complex" => Some(DifficultyLabel::Complex),
                _ => None,
            };
            if let Some(l) = label {
                found = Some((l, i));
                break;
            }
        }
    }
    match found {
        // Lowercasing can shift byte offsets for some scripts; fall back to
        // the whole reply when the offset is not valid in the original.
        Some((label, end)) => {
            let rest = if end <= reply.len() && reply.is_char_boundary(end) && lower.len() == reply.len() {
                &reply[end..]
            } else {
                reply
            };
            ParsedReply {
                label,
                rationale: rationale_of(rest),
                parse_failure: false,
            }
        }
        None => ParsedReply {
            label: DifficultyLabel::Complex,
            rationale: reply.trim().to_string(),
            parse_failure: true,
        },
    }
}

fn rationale_of(rest: &str) -> String {
    let lower = rest.to_lowercase();
    let text = match lower.find("because") {
        Some(p) if lower.len() == rest.len() => &rest[p..],
        _ => rest.trim_start_matches(|c: char| c.is_whitespace() || matches!(c, ',' | ':' | '.' | '-' | '*')),
    };
    text.trim().to_string()
}

/// Maps a benchmark-supplied difficulty string to a label.
pub fn map_external_label(raw: &str) -> DifficultyLabel {
    match raw.trim().to_ascii_lowercase().as_str() {
        "simple" | "easy" => DifficultyLabel::Simple,
        _ => DifficultyLabel::Complex,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub decision: RoutingDecision,
    /// Routing token usage: the classifier prompt and reply; empty for
    /// external labels.
    pub transcript: Vec<TokenRecord>,
}

/// Labels one task. `backend` is required unless `mode` is `ExternalLabel`.
pub fn classify(
    task: &Task,
    backend: Option<&dyn Backend>,
    mode: RoutingMode,
    templates: &TemplateSet,
) -> Result<Classification, RouterError> {
    if mode == RoutingMode::ExternalLabel {
        let raw = task
            .external_label
            .as_deref()
            .ok_or_else(|| RouterError::MissingExternalLabel(task.task_id.clone()))?;
        return Ok(Classification {
            decision: RoutingDecision {
                task_id: task.task_id.clone(),
                label: map_external_label(raw),
                rationale: String::new(),
                source: RoutingSource::ExternalLabel,
                raw_reply: raw.to_string(),
                parse_failure: false,
            },
            transcript: Vec::new(),
        });
    }
    let backend = backend.ok_or_else(|| {
        RouterError::Backend(BackendError::InvalidRequest(format!("{mode:?} routing needs a backend")))
    })?;
    let prompt = templates.render_classifier_prompt(task)?;
    let (_, response) = generate_checked(
        backend,
        GenerationRequest::greedy(prompt.text, CLASSIFIER_MAX_NEW_TOKENS),
    )?;
    let reply = response.completions[0].clone();
    let parsed = parse_label(&reply);
    if parsed.parse_failure {
        log::warn!("task {}: classifier reply names no label; routing as Complex", task.task_id);
    }
    let transcript = vec![
        TokenRecord::new(Stage::RoutingPrompt, response.prompt_tokens, &task.task_id, 0),
        TokenRecord::new(Stage::RoutingReply, response.completion_tokens[0], &task.task_id, 0),
    ];
    let rationale = if parsed.rationale.is_empty() {
        reply.trim().to_string()
    } else {
        parsed.rationale
    };
    Ok(Classification {
        decision: RoutingDecision {
            task_id: task.task_id.clone(),
            label: parsed.label,
            rationale,
            source: mode.source(),
            raw_reply: reply,
            parse_failure: parsed.parse_failure,
        },
        transcript,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingSummary {
    pub simple_count: usize,
    pub complex_count: usize,
    pub total: usize,
    pub per_task: BTreeMap<String, DifficultyLabel>,
}

impl RoutingSummary {
    pub fn from_labels<I, S>(labels: I) -> Result<Self, RouterError>
    where
        I: IntoIterator<Item = (S, DifficultyLabel)>,
        S: Into<String>,
    {
        let mut s = RoutingSummary::default();
        for (id, label) in labels {
            let id = id.into();
            if s.per_task.contains_key(&id) {
                return Err(RouterError::DuplicateDecision(id));
            }
            match label {
                DifficultyLabel::Simple => s.simple_count += 1,
                DifficultyLabel::Complex => s.complex_count += 1,
            }
            s.total += 1;
            s.per_task.insert(id, label);
        }
        Ok(s)
    }

    /// e.g. `275 Simple / 152 Complex (64.40% / 35.60%)`.
    pub fn distribution(&self) -> String {
        if self.total == 0 {
            return "0 Simple / 0 Complex".to_string();
        }
        format!(
            "{} Simple / {} Complex ({} / {})",
            self.simple_count,
            self.complex_count,
            crate::ledger::format_ratio_pct(self.simple_count as i64, self.total as i64),
            crate::ledger::format_ratio_pct(self.complex_count as i64, self.total as i64),
        )
    }
}

pub fn summarize<'a>(decisions: impl IntoIterator<Item = &'a RoutingDecision>) -> Result<RoutingSummary, RouterError> {
    RoutingSummary::from_labels(decisions.into_iter().map(|d| (d.task_id.clone(), d.label)))
}

/// Label agreement between two routings of the same task set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingDiff {
    pub total: usize,
    pub simple_simple: usize,
    pub simple_complex: usize,
    pub complex_simple: usize,
    pub complex_complex: usize,
}

impl RoutingDiff {
    pub fn differing(&self) -> usize {
        self.simple_complex + self.complex_simple
    }

    /// Exact rate as (numerator, denominator).
    pub fn rate(&self) -> (usize, usize) {
        (self.differing(), self.total)
    }

    /// e.g. `37 (22.56%)`.
    pub fn display(&self) -> String {
        format!(
            "{} ({})",
            self.differing(),
            crate::ledger::format_ratio_pct(self.differing() as i64, self.total as i64)
        )
    }
}

pub fn diff(a: &RoutingSummary, b: &RoutingSummary) -> Result<RoutingDiff, RouterError> {
    if let Some(id) = a
        .per_task
        .keys()
        .find(|k| !b.per_task.contains_key(*k))
        .or_else(|| b.per_task.keys().find(|k| !a.per_task.contains_key(*k)))
    {
        return Err(RouterError::TaskSetMismatch(id.clone()));
    }
    let mut d = RoutingDiff {
        total: a.total,
        simple_simple: 0,
        simple_complex: 0,
        complex_simple: 0,
        complex_complex: 0,
    };
    use DifficultyLabel::*;
    for (id, la) in &a.per_task {
        match (la, &b.per_task[id]) {
            (Simple, Simple) => d.simple_simple += 1,
            (Simple, Complex) => d.simple_complex += 1,
            (Complex, Simple) => d.complex_simple += 1,
            (Complex, Complex) => d.complex_complex += 1,
        }
    }
    Ok(d)
}
