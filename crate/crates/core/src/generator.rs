//! Candidate generation.
//!
//! Direct: one few-shot prompt, `n` sampled programs.
//!
//! ICoT: one stage-1 prompt sampled `n` times for intention traces
//! (specification plus idea), then one greedy stage-2 call per trace that
//! turns the trace into a program. Candidate `i` always comes from trace `i`.
//!
//! Every result carries a transcript of token records in a fixed shape
//! (`1 + n` for direct, `1 + 3n` for ICoT) from which the ledger prices the
//! task without calling the backend again.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    generate_checked, Backend, BackendError, GenerationRequest, DEFAULT_MAX_NEW_TOKENS, DEFAULT_TEMPERATURE,
    DEFAULT_TOP_P, LONG_REASONING_MAX_NEW_TOKENS,
};
use crate::corpus::Task;
use crate::ledger::{Stage, TokenRecord};
use crate::pool::bounded_map;
use crate::prompts::{Ablation, PromptError, TemplateSet};
use crate::router::{RoutingDecision, Strategy};

pub const DEFAULT_N: u32 = 20;

/// Stage-2 prompt body used when a stage-1 sample came back empty.
pub const EMPTY_TRACE_PLACEHOLDER: &str = "(no solving process was produced)";

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("invalid sampling config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaxNewTokens {
    pub direct: u32,
    pub self_cot_style: u32,
    pub icot_stage1: u32,
    pub icot_stage2: u32,
}

impl Default for MaxNewTokens {
    fn default() -> Self {
        Self {
            direct: DEFAULT_MAX_NEW_TOKENS,
            self_cot_style: LONG_REASONING_MAX_NEW_TOKENS,
            icot_stage1: DEFAULT_MAX_NEW_TOKENS,
            icot_stage2: DEFAULT_MAX_NEW_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub n: u32,
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: MaxNewTokens,
    pub seed: Option<u64>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n: DEFAULT_N,
            temperature: DEFAULT_TEMPERATURE,
            top_p: DEFAULT_TOP_P,
            max_new_tokens: MaxNewTokens::default(),
            seed: None,
        }
    }
}

impl SamplingConfig {
    pub fn with_n(mut self, n: u32) -> Self {
        self.n = n;
        self
    }

    pub fn validate(&self) -> Result<(), GeneratorError> {
        if self.n < 1 {
            return Err(GeneratorError::Config("n must be at least 1".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(GeneratorError::Config("temperature must be >= 0".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GeneratorError::Config("top_p must be in (0, 1]".into()));
        }
        let m = &self.max_new_tokens;
        if [m.direct, m.self_cot_style, m.icot_stage1, m.icot_stage2].contains(&0) {
            return Err(GeneratorError::Config("token budgets must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentionTrace {
    /// 1-based.
    pub index: u32,
    pub raw: String,
    pub specification: String,
    pub idea: String,
    pub malformed: bool,
}

impl IntentionTrace {
    pub fn parse(index: u32, raw: &str, ablation: Ablation) -> Self {
        let p = parse_intention(raw);
        let malformed = raw.trim().is_empty()
            || (ablation.wants_specification() && p.specification.is_empty())
            || (ablation.wants_idea() && p.idea.is_empty());
        Self {
            index,
            raw: raw.to_string(),
            specification: p.specification,
            idea: p.idea,
            malformed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "trace")]
pub enum CandidateOrigin {
    Direct,
    /// 1-based trace index.
    Icot(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub task_id: String,
    pub origin: CandidateOrigin,
    /// Empty when `no_code` is set.
    pub code: String,
    pub no_code: bool,
    pub raw_completion: String,
}

impl Candidate {
    pub fn from_completion(task_id: &str, origin: CandidateOrigin, raw: &str) -> Self {
        let code = extract_code(raw);
        Self {
            task_id: task_id.to_string(),
            origin,
            no_code: code.is_none(),
            code: code.unwrap_or_default(),
            raw_completion: raw.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub task_id: String,
    pub strategy: Strategy,
    pub candidates: Vec<Candidate>,
    pub traces: Vec<IntentionTrace>,
    pub transcript: Vec<TokenRecord>,
}

/// Everything a generation call needs besides the task.
#[derive(Clone, Copy)]
pub struct GenContext<'a> {
    pub backend: &'a dyn Backend,
    pub templates: &'a TemplateSet,
    pub sampling: &'a SamplingConfig,
    pub ablation: Ablation,
    /// Concurrent stage-2 calls per task.
    pub workers: usize,
}

impl<'a> GenContext<'a> {
    pub fn new(backend: &'a dyn Backend, templates: &'a TemplateSet, sampling: &'a SamplingConfig) -> Self {
        Self {
            backend,
            templates,
            sampling,
            ablation: Ablation::Full,
            workers: 4,
        }
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablation = ablation;
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }
}

pub fn generate_direct(task: &Task, ctx: &GenContext<'_>) -> Result<GenerationResult, GeneratorError> {
    let cfg = ctx.sampling;
    cfg.validate()?;
    let prompt = ctx.templates.render_default_direct_prompt(task)?;
    let request = GenerationRequest::sampled(prompt.text, cfg.temperature, cfg.top_p, cfg.n, cfg.max_new_tokens.direct)
        .with_seed(cfg.seed);
    let (_, response) = generate_checked(ctx.backend, request)?;

    let id = &task.task_id;
    let mut transcript = vec![TokenRecord::new(Stage::DirectPrompt, response.prompt_tokens, id, 0)];
    let mut candidates = Vec::with_capacity(cfg.n as usize);
    for (i, (text, tokens)) in response.completions.iter().zip(&response.completion_tokens).enumerate() {
        transcript.push(TokenRecord::new(Stage::DirectCode, *tokens, id, i as u32 + 1));
        candidates.push(Candidate::from_completion(id, CandidateOrigin::Direct, text));
    }
    Ok(GenerationResult {
        task_id: id.clone(),
        strategy: Strategy::Direct,
        candidates,
        traces: Vec::new(),
        transcript,
    })
}

pub fn generate_icot(task: &Task, ctx: &GenContext<'_>) -> Result<GenerationResult, GeneratorError> {
    let cfg = ctx.sampling;
    cfg.validate()?;
    let id = &task.task_id;

    let stage1 = ctx.templates.render_icot_stage1_prompt(task, ctx.ablation)?;
    let request = GenerationRequest::sampled(stage1.text, cfg.temperature, cfg.top_p, cfg.n, cfg.max_new_tokens.icot_stage1)
        .with_seed(cfg.seed);
    let (_, response) = generate_checked(ctx.backend, request)?;
    let traces: Vec<IntentionTrace> = response
        .completions
        .iter()
        .enumerate()
        .map(|(i, raw)| IntentionTrace::parse(i as u32 + 1, raw, ctx.ablation))
        .collect();
    for t in traces.iter().filter(|t| t.malformed) {
        log::debug!("task {id}: trace {} is malformed; using raw text", t.index);
    }

    // Malformed traces still go to stage 2 with their raw text.
    let stage2 = bounded_map(&traces, ctx.workers, |_, trace| -> Result<_, GeneratorError> {
        let body = if trace.raw.trim().is_empty() {
            EMPTY_TRACE_PLACEHOLDER
        } else {
            trace.raw.as_str()
        };
        let prompt = ctx.templates.render_icot_stage2_prompt(task, body, ctx.ablation)?;
        let request = GenerationRequest::greedy(prompt.text, cfg.max_new_tokens.icot_stage2)
            .with_seed(cfg.seed)
            .with_ordinal(trace.index);
        let (_, r) = generate_checked(ctx.backend, request)?;
        Ok((r.prompt_tokens, r.completion_tokens[0], r.completions[0].clone()))
    });
    let stage2 = stage2.into_iter().collect::<Result<Vec<_>, _>>()?;

    let n = traces.len();
    let mut transcript = Vec::with_capacity(1 + 3 * n);
    transcript.push(TokenRecord::new(Stage::IcotStage1Prompt, response.prompt_tokens, id, 0));
    for (t, tokens) in traces.iter().zip(&response.completion_tokens) {
        transcript.push(TokenRecord::new(Stage::IcotTrace, *tokens, id, t.index));
    }
    for (t, (prompt_tokens, _, _)) in traces.iter().zip(&stage2) {
        transcript.push(TokenRecord::new(Stage::IcotStage2Prompt, *prompt_tokens, id, t.index));
    }
    for (t, (_, code_tokens, _)) in traces.iter().zip(&stage2) {
        transcript.push(TokenRecord::new(Stage::IcotCode, *code_tokens, id, t.index));
    }
    let candidates = traces
        .iter()
        .zip(&stage2)
        .map(|(t, (_, _, text))| Candidate::from_completion(id, CandidateOrigin::Icot(t.index), text))
        .collect();
    Ok(GenerationResult {
        task_id: id.clone(),
        strategy: Strategy::Icot,
        candidates,
        traces,
        transcript,
    })
}

pub fn generate(task: &Task, strategy: Strategy, ctx: &GenContext<'_>) -> Result<GenerationResult, GeneratorError> {
    match strategy {
        Strategy::Direct => generate_direct(task, ctx),
        Strategy::Icot => generate_icot(task, ctx),
    }
}

/// Generates with the strategy the routing decision selects.
pub fn run_strategy(
    task: &Task,
    decision: &RoutingDecision,
    ctx: &GenContext<'_>,
) -> Result<GenerationResult, GeneratorError> {
    generate(task, decision.strategy(), ctx)
}

fn is_fence(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

fn is_def_line(line: &str) -> bool {
    let t = line.trim_start();
    let rest = t.strip_prefix("async ").unwrap_or(t);
    let Some(rest) = rest.strip_prefix("def ") else {
        return false;
    };
    let rest = rest.trim_start();
    let name_len = rest
        .char_indices()
        .find(|&(_, c)| !(c.is_alphanumeric() || c == '_'))
        .map_or(rest.len(), |(i, _)| i);
    name_len > 0 && rest[name_len..].trim_start().starts_with('(')
}

/// Lines that may sit above a definition and belong to the program.
fn is_preamble_line(line: &str) -> bool {
    let t = line.trim();
    if t.is_empty() || t.starts_with('#') || t.starts_with('@') {
        return true;
    }
    if t.starts_with("import ") || (t.starts_with("from ") && t.contains(" import ")) {
        return true;
    }
    if t.starts_with("class ") && t.ends_with(':') {
        return true;
    }
    // Top-level `NAME = value` or `NAME: type = value`.
    if line.starts_with(|c: char| c.is_alphabetic() || c == '_') {
        let name_end = t
            .char_indices()
            .find(|&(_, c)| !(c.is_alphanumeric() || c == '_'))
            .map_or(t.len(), |(i, _)| i);
        let after = t[name_end..].trim_start();
        return (after.starts_with('=') && !after.starts_with("==")) || after.starts_with(':');
    }
    false
}

fn tidy(lines: &[&str]) -> Option<String> {
    let start = lines.iter().position(|l| !l.trim().is_empty())?;
    let text = lines[start..].join("\n");
    let text = text.trim_end();
    (!text.is_empty()).then(|| text.to_string())
}

/// Pulls the program out of a completion.
///
/// 1. If a fenced block exists, its interior (an unterminated block runs to
///    the end of the text).
/// 2. Otherwise, from the first function definition to the end of the text,
///    extended upwards over imports, decorators, comments, top-level
///    assignments and class headers directly above it.
/// 3. Otherwise `None`.
///
/// Leading blank lines and trailing whitespace are dropped. A lone bare fence
/// after a definition is treated as a stray closer and cut.
pub fn extract_code(raw: &str) -> Option<String> {
    let lines: Vec<&str> = raw.lines().collect();
    let fences: Vec<usize> = (0..lines.len()).filter(|&i| is_fence(lines[i])).collect();
    let first_def = lines.iter().position(|l| is_def_line(l));

    let stray_closer = fences.len() == 1
        && lines[fences[0]].trim() == "```"
        && first_def.is_some_and(|d| d < fences[0]);
    if !fences.is_empty() && !stray_closer {
        let open = fences[0];
        let close = fences.get(1).copied().unwrap_or(lines.len());
        return tidy(&lines[open + 1..close]);
    }

    let def = first_def?;
    let end = if stray_closer { fences[0] } else { lines.len() };
    let mut start = def;
    while start > 0 && is_preamble_line(lines[start - 1]) {
        start -= 1;
    }
    tidy(&lines[start..end])
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedIntention {
    pub specification: String,
    pub idea: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Heading {
    Specification,
    Idea,
}

/// Recognizes `1: Specification:`, `### 2. Idea`, `**Idea:**`, `- Specification`
/// and similar. Returns the heading and any text after it on the same line.
fn heading(line: &str) -> Option<(Heading, &str)> {
    let t = line.trim_start_matches(|c: char| c.is_whitespace() || c.is_ascii_digit() || ".:#*-)".contains(c));
    let lower = t.to_ascii_lowercase();
    let (kind, word_len) = if lower.starts_with("specification") {
        (Heading::Specification, "specification".len())
    } else if lower.starts_with("idea") {
        (Heading::Idea, "idea".len())
    } else {
        return None;
    };
    let rest = &t[word_len..];
    if rest.starts_with(|c: char| c.is_alphanumeric() || c == '_') {
        return None;
    }
    let rest = rest.trim_start_matches(['*', ' ', '\t']);
    if rest.is_empty() {
        return Some((kind, ""));
    }
    let after = rest.strip_prefix(':')?;
    Some((kind, after.trim_start_matches(['*', ' ', '\t'])))
}

fn section(first: &str, body: &[&str]) -> String {
    let mut parts: Vec<&str> = Vec::with_capacity(body.len() + 1);
    if !first.trim().is_empty() {
        parts.push(first);
    }
    parts.extend_from_slice(body);
    let text = parts.join("\n");
    let trimmed: Vec<&str> = text.lines().map(str::trim_end).collect();
    trimmed.join("\n").trim().to_string()
}

/// Splits a stage-1 completion into its specification and idea sections.
/// A missing section comes back empty.
pub fn parse_intention(raw: &str) -> ParsedIntention {
    let lines: Vec<&str> = raw.lines().collect();
    let headings: Vec<(usize, Heading, &str)> = lines
        .iter()
        .enumerate()
        .filter_map(|(i, l)| heading(l).map(|(h, rest)| (i, h, rest)))
        .collect();
    let spec = headings.iter().find(|h| h.1 == Heading::Specification);
    let idea = headings
        .iter()
        .find(|h| h.1 == Heading::Idea && spec.is_none_or(|s| h.0 > s.0));

    let mut out = ParsedIntention::default();
    if let Some(&(i, _, rest)) = spec {
        let end = idea.map_or(lines.len(), |h| h.0);
        out.specification = section(rest, &lines[i + 1..end]);
    }
    if let Some(&(i, _, rest)) = idea {
        out.idea = section(rest, &lines[i + 1..]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{GenerationResponse, MockBackend};
    use crate::router::{DifficultyLabel, RoutingSource};

    fn task() -> Task {
        Task {
            task_id: "T/0".into(),
            prompt: "def add(a, b):\n    \"\"\"Add two numbers.\"\"\"\n".into(),
            entry_point: "add".into(),
            canonical_solution: None,
            test_suite: "def check(candidate):\n    assert candidate(1, 2) == 3\n".into(),
            external_label: None,
            benchmark: "t".into(),
            extra: Default::default(),
        }
    }

    fn decision(label: DifficultyLabel) -> RoutingDecision {
        RoutingDecision {
            task_id: "T/0".into(),
            label,
            rationale: "because".into(),
            source: RoutingSource::ExternalClassifier,
            raw_reply: String::new(),
            parse_failure: false,
        }
    }

    /// Answers stage 1 with numbered traces and stage 2 with a program that
    /// names the trace it saw.
    fn scripted() -> MockBackend {
        MockBackend::from_fn("mock", |req| {
            let n = req.n as usize;
            if req.prompt_text.contains("write a code based on it") {
                let idx = req.call_ordinal;
                return Ok(GenerationResponse::new(
                    vec![format!("```python\ndef add(a, b):\n    return a + b  # {idx}\n```")],
                    100 + idx as u64,
                    vec![10],
                    "mock",
                ));
            }
            if req.prompt_text.contains("structured solving process") {
                let texts = (1..=n)
                    .map(|i| format!("1: Specification:\nInputs a, b. #{i}\n2: Idea:\nReturn the sum. O(1)"))
                    .collect();
                return Ok(GenerationResponse::new(texts, 50, vec![20; n], "mock"));
            }
            let texts = (0..n).map(|i| format!("def add(a, b):\n    return a + b + {i} - {i}")).collect();
            Ok(GenerationResponse::new(texts, 40, vec![15; n], "mock"))
        })
    }

    #[test]
    fn direct_shape() {
        let mock = scripted();
        let ts = TemplateSet::default();
        let cfg = SamplingConfig::default().with_n(3);
        let r = generate_direct(&task(), &GenContext::new(&mock, &ts, &cfg)).unwrap();
        assert_eq!(r.candidates.len(), 3);
        assert_eq!(r.transcript.len(), 4);
        assert!(r.traces.is_empty());
        assert!(r.candidates.iter().all(|c| c.origin == CandidateOrigin::Direct && !c.no_code));
        let req = &mock.requests()[0];
        assert_eq!((req.n, req.temperature, req.top_p, req.max_new_tokens), (3, 0.8, 0.95, 300));
    }

    #[test]
    fn icot_links_candidates_to_traces() {
        let mock = scripted();
        let ts = TemplateSet::default();
        let cfg = SamplingConfig::default().with_n(5);
        let ctx = GenContext::new(&mock, &ts, &cfg).with_workers(3);
        let r = run_strategy(&task(), &decision(DifficultyLabel::Complex), &ctx).unwrap();
        assert_eq!(r.strategy, Strategy::Icot);
        assert_eq!(r.transcript.len(), 1 + 3 * 5);
        assert_eq!(mock.calls(), 6);
        for (i, (c, t)) in r.candidates.iter().zip(&r.traces).enumerate() {
            let idx = i as u32 + 1;
            assert_eq!(t.index, idx);
            assert_eq!(c.origin, CandidateOrigin::Icot(idx));
            assert!(c.code.ends_with(&format!("# {idx}")));
            assert!(t.specification.contains(&format!("#{idx}")));
            assert!(!t.malformed);
        }
        let stage2: Vec<_> = mock.requests().into_iter().filter(|r| r.n == 1).collect();
        assert!(stage2.iter().all(|r| r.temperature == 0.0 && r.max_new_tokens == 300));
    }

    #[test]
    fn icot_n1_has_four_records() {
        let mock = scripted();
        let ts = TemplateSet::default();
        let cfg = SamplingConfig::default().with_n(1);
        let r = run_strategy(&task(), &decision(DifficultyLabel::Complex), &GenContext::new(&mock, &ts, &cfg)).unwrap();
        let stages: Vec<_> = r.transcript.iter().map(|t| t.stage).collect();
        assert_eq!(
            stages,
            [Stage::IcotStage1Prompt, Stage::IcotTrace, Stage::IcotStage2Prompt, Stage::IcotCode]
        );
    }

    #[test]
    fn malformed_and_empty_traces_still_produce_candidates() {
        let mock = MockBackend::from_fn("m", |req| {
            if req.n > 1 {
                Ok(GenerationResponse::new(vec!["just vibes".into(), "".into()], 5, vec![2, 0], "m"))
            } else {
                Ok(GenerationResponse::new(vec!["no code here".into()], 5, vec![3], "m"))
            }
        });
        let ts = TemplateSet::default();
        let cfg = SamplingConfig::default().with_n(2);
        let r = generate_icot(&task(), &GenContext::new(&mock, &ts, &cfg)).unwrap();
        assert_eq!(r.candidates.len(), 2);
        assert!(r.traces.iter().all(|t| t.malformed));
        assert!(r.candidates.iter().all(|c| c.no_code && c.code.is_empty()));
        assert!(mock.requests()[2].prompt_text.contains(EMPTY_TRACE_PLACEHOLDER)
            || mock.requests()[1].prompt_text.contains(EMPTY_TRACE_PLACEHOLDER));
    }

    #[test]
    fn backend_errors_propagate() {
        let mock = MockBackend::scripted("m", []);
        let ts = TemplateSet::default();
        let cfg = SamplingConfig::default().with_n(2);
        assert!(matches!(
            generate_direct(&task(), &GenContext::new(&mock, &ts, &cfg)),
            Err(GeneratorError::Backend(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(SamplingConfig::default().validate().is_ok());
        assert!(SamplingConfig::default().with_n(0).validate().is_err());
        let c = SamplingConfig {
            top_p: 1.5,
            ..SamplingConfig::default()
        };
        assert!(c.validate().is_err());
        let d = MaxNewTokens::default();
        assert_eq!((d.direct, d.self_cot_style, d.icot_stage1, d.icot_stage2), (300, 600, 300, 300));
        assert_eq!(SamplingConfig::default().n, 20);
    }

    #[test]
    fn extraction_rules() {
        assert_eq!(
            extract_code("```python\ndef f():\n  return 1\n```").as_deref(),
            Some("def f():\n  return 1")
        );
        assert_eq!(
            extract_code("def add(a,b): return a+b").as_deref(),
            Some("def add(a,b): return a+b")
        );
        assert_eq!(extract_code("Sure, here's my plan."), None);
        assert_eq!(
            extract_code("Here you go:\nimport math\n\ndef f(x):\n    return math.sqrt(x)\n").as_deref(),
            Some("import math\n\ndef f(x):\n    return math.sqrt(x)")
        );
        assert_eq!(
            extract_code("Intro\n```\nx = 1\n```\nand\n```\ny = 2\n```").as_deref(),
            Some("x = 1")
        );
        assert_eq!(
            extract_code("```python\ndef f():\n    return 1").as_deref(),
            Some("def f():\n    return 1")
        );
        assert_eq!(
            extract_code("def f():\n    return 1\n```\nThat is all.").as_deref(),
            Some("def f():\n    return 1")
        );
        assert_eq!(extract_code("```\n\n```"), None);
        assert_eq!(extract_code(""), None);
        assert_eq!(extract_code("the def keyword defines functions"), None);
    }

    #[test]
    fn intention_parsing() {
        let p = parse_intention("1: Specification:\n  - Input: list\n\n2: Idea:\n  - sort it\n  - O(n log n)");
        assert_eq!(p.specification, "- Input: list");
        assert_eq!(p.idea, "- sort it\n  - O(n log n)");

        let p = parse_intention("### 1. **Specification**\nin/out\n### 2. **Idea**:\nloop");
        assert_eq!((p.specification.as_str(), p.idea.as_str()), ("in/out", "loop"));

        let p = parse_intention("**Idea:** use a set");
        assert_eq!((p.specification.as_str(), p.idea.as_str()), ("", "use a set"));

        assert_eq!(parse_intention(""), ParsedIntention::default());

        // An idea heading before the specification is ignored.
        let p = parse_intention("Idea: early\nSpecification: s\nIdea: late");
        assert_eq!((p.specification.as_str(), p.idea.as_str()), ("s", "late"));

        // Words that merely start with a heading name are not headings.
        assert!(heading("Ideally we sort").is_none());
        assert!(heading("- Idea is simple").is_none());
    }

    #[test]
    fn malformed_depends_on_ablation() {
        let only_idea = "1: Idea:\nuse a set";
        assert!(IntentionTrace::parse(1, only_idea, Ablation::Full).malformed);
        assert!(!IntentionTrace::parse(1, only_idea, Ablation::NoSpecification).malformed);
        assert!(IntentionTrace::parse(1, only_idea, Ablation::NoIdea).malformed);
        assert!(IntentionTrace::parse(1, "", Ablation::Full).malformed);
    }
}
