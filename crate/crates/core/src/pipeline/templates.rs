//! Prompt templates with `{{name}}` placeholders.
//!
//! A template file holds the system text, a line containing only `---`, then
//! the user text. Files without the separator are all user text.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use super::Stage;

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("template {template}: unknown placeholder `{{{{{name}}}}}`")]
    UnknownPlaceholder { template: String, name: String },
    #[error("template {template}: no value for `{{{{{name}}}}}`")]
    MissingValue { template: String, name: String },
    #[error("template {path}: {message}")]
    Io { path: String, message: String },
}

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{\{\s*([a-z_]+)\s*\}\}").expect("valid regex"));

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub name: String,
    pub system: String,
    pub user: String,
}

impl Template {
    pub fn parse(name: &str, text: &str) -> Self {
        let (system, user) = match text.split_once("\n---\n") {
            Some((s, u)) => (s.trim().to_string(), u.trim().to_string()),
            None => (String::new(), text.trim().to_string()),
        };
        Template {
            name: name.to_string(),
            system,
            user,
        }
    }

    pub fn placeholders(&self) -> BTreeSet<String> {
        [&self.system, &self.user]
            .iter()
            .flat_map(|t| PLACEHOLDER.captures_iter(t).map(|c| c[1].to_string()))
            .collect()
    }

    /// `(system, user)` with every placeholder substituted.
    pub fn render(&self, values: &BTreeMap<&str, String>) -> Result<(String, String), TemplateError> {
        let fill = |text: &str| -> Result<String, TemplateError> {
            let mut out = String::with_capacity(text.len());
            let mut last = 0;
            for c in PLACEHOLDER.captures_iter(text) {
                let whole = c.get(0).expect("match");
                let value = values.get(&c[1]).ok_or_else(|| TemplateError::MissingValue {
                    template: self.name.clone(),
                    name: c[1].to_string(),
                })?;
                out.push_str(&text[last..whole.start()]);
                out.push_str(value);
                last = whole.end();
            }
            out.push_str(&text[last..]);
            Ok(out)
        };
        Ok((fill(&self.system)?, fill(&self.user)?))
    }
}

/// Placeholders a stage can fill from the job state at that point.
pub fn allowed_placeholders(stage: Stage) -> &'static [&'static str] {
    match stage {
        Stage::CaptionFrames => &["frames", "frame_count"],
        Stage::InferTransitions => &["frames", "frame_count", "captions"],
        Stage::SynthesizeRpc => &["frame_count", "captions", "transitions"],
        Stage::ExtractContext => &["frames", "frame_count", "question", "task_type", "captions"],
        Stage::MergeCot => &["question", "task_type", "rpc", "context", "instruction"],
        Stage::QualityCheck => &["question", "task_type", "ground_truth", "captions", "rpc", "cot"],
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub stages: BTreeMap<Stage, Template>,
    /// Answer-format instruction appended to training prompts.
    pub instruction: String,
}

const DEFAULTS: [(Stage, &str); 6] = [
    (Stage::CaptionFrames, include_str!("../../templates/caption_frames.txt")),
    (Stage::InferTransitions, include_str!("../../templates/infer_transitions.txt")),
    (Stage::SynthesizeRpc, include_str!("../../templates/synthesize_rpc.txt")),
    (Stage::ExtractContext, include_str!("../../templates/extract_context.txt")),
    (Stage::MergeCot, include_str!("../../templates/merge_cot.txt")),
    (Stage::QualityCheck, include_str!("../../templates/quality_check.txt")),
];

const DEFAULT_INSTRUCTION: &str = include_str!("../../templates/instruction.txt");

impl Default for Templates {
    fn default() -> Self {
        Templates {
            stages: DEFAULTS
                .iter()
                .map(|(stage, text)| (*stage, Template::parse(stage.as_str(), text)))
                .collect(),
            instruction: DEFAULT_INSTRUCTION.trim().to_string(),
        }
    }
}

impl Templates {
    /// Built-in templates, overridden by any `<stage>.txt` or
    /// `instruction.txt` found in `dir`.
    pub fn load(dir: &Path) -> Result<Self, TemplateError> {
        let mut templates = Templates::default();
        let read = |name: &str| -> Result<Option<String>, TemplateError> {
            let path = dir.join(format!("{name}.txt"));
            match std::fs::read_to_string(&path) {
                Ok(text) => Ok(Some(text)),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
                Err(e) => Err(TemplateError::Io {
                    path: path.display().to_string(),
                    message: e.to_string(),
                }),
            }
        };
        for stage in Stage::ALL {
            if let Some(text) = read(stage.as_str())? {
                templates.stages.insert(stage, Template::parse(stage.as_str(), &text));
            }
        }
        if let Some(text) = read("instruction")? {
            templates.instruction = text.trim().to_string();
        }
        templates.validate()?;
        Ok(templates)
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        for (stage, template) in &self.stages {
            let allowed = allowed_placeholders(*stage);
            if let Some(name) = template.placeholders().into_iter().find(|p| !allowed.contains(&p.as_str())) {
                return Err(TemplateError::UnknownPlaceholder {
                    template: template.name.clone(),
                    name,
                });
            }
        }
        Ok(())
    }

    pub fn get(&self, stage: Stage) -> &Template {
        &self.stages[&stage]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_complete() {
        let t = Templates::default();
        t.validate().unwrap();
        assert_eq!(t.stages.len(), 6);
        assert!(t.get(Stage::MergeCot).placeholders().contains("instruction"));
        assert!(t.instruction.contains("<answer>"));
        assert!(!t.get(Stage::QualityCheck).system.is_empty());
    }

    #[test]
    fn render_and_errors() {
        let t = Template::parse("x", "sys {{a}}\n---\nuser {{ b }} and {{a}}");
        let values = BTreeMap::from([("a", "1".to_string()), ("b", "2".to_string())]);
        assert_eq!(t.render(&values).unwrap(), ("sys 1".into(), "user 2 and 1".into()));
        let missing = BTreeMap::from([("a", "1".to_string())]);
        assert!(matches!(t.render(&missing), Err(TemplateError::MissingValue { .. })));
        let mut set = Templates::default();
        set.stages.insert(Stage::CaptionFrames, Template::parse("caption_frames", "{{cot}}"));
        assert!(matches!(set.validate(), Err(TemplateError::UnknownPlaceholder { .. })));
    }

    #[test]
    fn directory_overrides() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("instruction.txt"), "answer in tags\n").unwrap();
        std::fs::write(dir.path().join("caption_frames.txt"), "describe {{frames}}").unwrap();
        let t = Templates::load(dir.path()).unwrap();
        assert_eq!(t.instruction, "answer in tags");
        assert_eq!(t.get(Stage::CaptionFrames).system, "");
        std::fs::write(dir.path().join("merge_cot.txt"), "{{nonsense}}").unwrap();
        assert!(Templates::load(dir.path()).is_err());
    }
}
