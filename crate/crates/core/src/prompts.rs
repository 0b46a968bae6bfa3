//! Prompt rendering for the classifier, direct few-shot, and the two ICoT
//! stages.
//!
//! Templates are plain text assets with `{{slot}}` placeholders. The bundled
//! set lives in `templates/`; [`TemplateSet::load_dir`] overrides any subset
//! of them from a directory with the same file names.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Task;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("task `{0}` has an empty prompt")]
    EmptyPrompt(String),
    #[error("direct prompt needs at least one exemplar")]
    NoExemplars,
    #[error("intention trace is empty")]
    EmptyTrace,
    #[error("template `{template}` references unknown slot `{slot}`")]
    MissingSlot { template: String, slot: String },
    #[error("template `{0}` has an unterminated slot")]
    UnterminatedSlot(String),
    #[error("failed to read template asset {path}: {message}")]
    Asset { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PromptKind {
    Classifier,
    DirectFewShot,
    IcotStage1,
    IcotStage2,
}

/// Which ICoT sections the stage-1 prompt asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    NoSpecification,
    NoIdea,
}

impl Ablation {
    pub fn wants_specification(self) -> bool {
        !matches!(self, Ablation::NoSpecification)
    }

    pub fn wants_idea(self) -> bool {
        !matches!(self, Ablation::NoIdea)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::Full => "full",
            Ablation::NoSpecification => "no_specification",
            Ablation::NoIdea => "no_idea",
        })
    }
}

impl std::str::FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "full" => Ok(Ablation::Full),
            "no_specification" | "no_spec" => Ok(Ablation::NoSpecification),
            "no_idea" => Ok(Ablation::NoIdea),
            other => Err(format!("unknown ablation `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectExemplar {
    pub problem: String,
    pub solution: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IcotExemplar {
    pub problem: String,
    pub specification: String,
    pub idea: String,
    pub code: String,
}

impl IcotExemplar {
    /// The worked solving process, restricted to the sections of `ablation`.
    pub fn answer(&self, ablation: Ablation) -> String {
        match ablation {
            Ablation::Full => format!(
                "1: Specification:\n{}\n2: Idea:\n{}",
                self.specification, self.idea
            ),
            Ablation::NoSpecification => format!("1: Idea:\n{}", self.idea),
            Ablation::NoIdea => format!("1: Specification:\n{}", self.specification),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub kind: PromptKind,
    pub task_id: String,
}

/// All prompt templates and exemplar sets used by one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub classifier: String,
    pub direct: String,
    pub direct_exemplar: String,
    pub icot_stage1: String,
    pub icot_stage1_exemplar: String,
    pub icot_stage2: String,
    pub icot_stage2_exemplar: String,
    pub instruction_full: String,
    pub instruction_no_specification: String,
    pub instruction_no_idea: String,
    pub direct_exemplars: Vec<DirectExemplar>,
    pub icot_exemplars: Vec<IcotExemplar>,
}

const ASSET_FILES: [&str; 10] = [
    "classifier.txt",
    "direct.txt",
    "direct_exemplar.txt",
    "icot_stage1.txt",
    "icot_stage1_exemplar.txt",
    "icot_stage2.txt",
    "icot_stage2_exemplar.txt",
    "instruction_full.txt",
    "instruction_no_specification.txt",
    "instruction_no_idea.txt",
];

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            classifier: include_str!("../templates/classifier.txt").to_string(),
            direct: include_str!("../templates/direct.txt").to_string(),
            direct_exemplar: include_str!("../templates/direct_exemplar.txt").to_string(),
            icot_stage1: include_str!("../templates/icot_stage1.txt").to_string(),
            icot_stage1_exemplar: include_str!("../templates/icot_stage1_exemplar.txt").to_string(),
            icot_stage2: include_str!("../templates/icot_stage2.txt").to_string(),
            icot_stage2_exemplar: include_str!("../templates/icot_stage2_exemplar.txt").to_string(),
            instruction_full: include_str!("../templates/instruction_full.txt").to_string(),
            instruction_no_specification: include_str!("../templates/instruction_no_specification.txt")
                .to_string(),
            instruction_no_idea: include_str!("../templates/instruction_no_idea.txt").to_string(),
            direct_exemplars: serde_json::from_str(include_str!("../templates/exemplars/direct.json"))
                .expect("bundled direct exemplars are valid"),
            icot_exemplars: serde_json::from_str(include_str!("../templates/exemplars/icot.json"))
                .expect("bundled icot exemplars are valid"),
        }
    }
}

impl TemplateSet {
    /// Starts from the bundled set and replaces every asset found in `dir`.
    /// Exemplars are read from `exemplars/direct.json` and `exemplars/icot.json`.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::default();
        for name in ASSET_FILES {
            let path = dir.join(name);
            if !path.exists() {
                continue;
            }
            let text = read_asset(&path)?;
            *set.slot_mut(name) = text;
        }
        let direct = dir.join("exemplars").join("direct.json");
        if direct.exists() {
            set.direct_exemplars = parse_asset(&direct)?;
        }
        let icot = dir.join("exemplars").join("icot.json");
        if icot.exists() {
            set.icot_exemplars = parse_asset(&icot)?;
        }
        Ok(set)
    }

    fn slot_mut(&mut self, file: &str) -> &mut String {
        match file {
            "classifier.txt" => &mut self.classifier,
            "direct.txt" => &mut self.direct,
            "direct_exemplar.txt" => &mut self.direct_exemplar,
            "icot_stage1.txt" => &mut self.icot_stage1,
            "icot_stage1_exemplar.txt" => &mut self.icot_stage1_exemplar,
            "icot_stage2.txt" => &mut self.icot_stage2,
            "icot_stage2_exemplar.txt" => &mut self.icot_stage2_exemplar,
            "instruction_full.txt" => &mut self.instruction_full,
            "instruction_no_specification.txt" => &mut self.instruction_no_specification,
            "instruction_no_idea.txt" => &mut self.instruction_no_idea,
            _ => unreachable!("not an asset file: {file}"),
        }
    }

    /// Stable digest over every template and exemplar, used in cache keys.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for part in [
            &self.classifier,
            &self.direct,
            &self.direct_exemplar,
            &self.icot_stage1,
            &self.icot_stage1_exemplar,
            &self.icot_stage2,
            &self.icot_stage2_exemplar,
            &self.instruction_full,
            &self.instruction_no_specification,
            &self.instruction_no_idea,
        ] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        h.update(serde_json::to_vec(&self.direct_exemplars).unwrap_or_default());
        h.update(serde_json::to_vec(&self.icot_exemplars).unwrap_or_default());
        hex::encode(h.finalize())
    }

    fn instruction(&self, ablation: Ablation) -> &str {
        let text = match ablation {
            Ablation::Full => &self.instruction_full,
            Ablation::NoSpecification => &self.instruction_no_specification,
            Ablation::NoIdea => &self.instruction_no_idea,
        };
        text.trim_end()
    }

    pub fn render_classifier_prompt(&self, task: &Task) -> Result<RenderedPrompt, PromptError> {
        check_prompt(task)?;
        let text = fill("classifier", &self.classifier, &[("prompt", &task.prompt)])?;
        Ok(rendered(text, PromptKind::Classifier, task))
    }

    pub fn render_direct_prompt(
        &self,
        task: &Task,
        exemplars: &[DirectExemplar],
    ) -> Result<RenderedPrompt, PromptError> {
        check_prompt(task)?;
        if exemplars.is_empty() {
            return Err(PromptError::NoExemplars);
        }
        let mut block = String::new();
        for ex in exemplars {
            block.push_str(&fill(
                "direct_exemplar",
                &self.direct_exemplar,
                &[("problem", &ex.problem), ("solution", &ex.solution)],
            )?);
        }
        let text = fill(
            "direct",
            &self.direct,
            &[("exemplars", &block), ("prompt", &task.prompt)],
        )?;
        Ok(rendered(text, PromptKind::DirectFewShot, task))
    }

    /// Direct prompt with the bundled exemplar trio.
    pub fn render_default_direct_prompt(&self, task: &Task) -> Result<RenderedPrompt, PromptError> {
        self.render_direct_prompt(task, &self.direct_exemplars)
    }

    pub fn render_icot_stage1_prompt(
        &self,
        task: &Task,
        ablation: Ablation,
    ) -> Result<RenderedPrompt, PromptError> {
        check_prompt(task)?;
        let instruction = self.instruction(ablation);
        let mut block = String::new();
        for ex in &self.icot_exemplars {
            block.push_str(&fill(
                "icot_stage1_exemplar",
                &self.icot_stage1_exemplar,
                &[
                    ("problem", &ex.problem),
                    ("instruction", instruction),
                    ("answer", &ex.answer(ablation)),
                ],
            )?);
        }
        let text = fill(
            "icot_stage1",
            &self.icot_stage1,
            &[
                ("exemplars", &block),
                ("prompt", &task.prompt),
                ("instruction", instruction),
            ],
        )?;
        Ok(rendered(text, PromptKind::IcotStage1, task))
    }

    /// Stage-2 prompt: the task, the quoted solving process, and the
    /// instruction to write code from it while distrusting its errors.
    pub fn render_icot_stage2_prompt(
        &self,
        task: &Task,
        trace: &str,
        ablation: Ablation,
    ) -> Result<RenderedPrompt, PromptError> {
        check_prompt(task)?;
        if trace.trim().is_empty() {
            return Err(PromptError::EmptyTrace);
        }
        let mut block = String::new();
        for ex in &self.icot_exemplars {
            block.push_str(&fill(
                "icot_stage2_exemplar",
                &self.icot_stage2_exemplar,
                &[
                    ("problem", &ex.problem),
                    ("trace", &ex.answer(ablation)),
                    ("code", &ex.code),
                ],
            )?);
        }
        let text = fill(
            "icot_stage2",
            &self.icot_stage2,
            &[("exemplars", &block), ("prompt", &task.prompt), ("trace", trace)],
        )?;
        Ok(rendered(text, PromptKind::IcotStage2, task))
    }
}

fn read_asset(path: &Path) -> Result<String, PromptError> {
    fs::read_to_string(path).map_err(|e| PromptError::Asset {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn parse_asset<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PromptError> {
    serde_json::from_str(&read_asset(path)?).map_err(|e| PromptError::Asset {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn check_prompt(task: &Task) -> Result<(), PromptError> {
    if task.prompt.is_empty() {
        return Err(PromptError::EmptyPrompt(task.task_id.clone()));
    }
    Ok(())
}

fn rendered(text: String, kind: PromptKind, task: &Task) -> RenderedPrompt {
    RenderedPrompt {
        text,
        kind,
        task_id: task.task_id.clone(),
    }
}

/// Single-pass `{{slot}}` substitution. Slot values are inserted verbatim and
/// never re-expanded. Every slot the template names must be supplied.
pub fn fill(name: &str, template: &str, slots: &[(&str, &str)]) -> Result<String, PromptError> {
    let lookup: BTreeMap<&str, &str> = slots.iter().copied().collect();
    let mut out = String::with_capacity(template.len() + slots.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after
            .find("}}")
            .ok_or_else(|| PromptError::UnterminatedSlot(name.to_string()))?;
        let slot = after[..end].trim();
        let value = lookup.get(slot).ok_or_else(|| PromptError::MissingSlot {
            template: name.to_string(),
            slot: slot.to_string(),
        })?;
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}
