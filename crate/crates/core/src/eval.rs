//! Scoring prediction files per task family.
//!
//! Multiple-choice families use exact letter match and numeric families use
//! mean relative accuracy. Per-task scores are shown on a 0-100 scale and
//! the overall score is the unweighted mean of the families that have data.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::cot::{parse_with, ParseOptions};
use crate::jsonl::{self, JsonlError};
use crate::question::{Answer, TaskType};
use crate::reward::{default_thresholds, extract_option_letters, mcq_accuracy, mra, RewardError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("line {line}: {message}")]
    Strict { line: usize, message: String },
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("malformed csv report: {0}")]
    Csv(String),
}

fn deserialize_truth<'de, D: Deserializer<'de>>(d: D) -> Result<Answer, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
        Full { value: f64, #[serde(default)] unit: String },
    }
    match Repr::deserialize(d)? {
        Repr::Number(v) => Ok(Answer::numeric(v, "")),
        Repr::Full { value, unit } => Ok(Answer::Numeric { value, unit }),
        Repr::Text(s) => {
            let t = s.trim();
            let mut chars = t.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) if ('A'..='D').contains(&c.to_ascii_uppercase()) => Ok(Answer::Choice(c.to_ascii_uppercase())),
                _ => first_number(t)
                    .map(|v| Answer::numeric(v, ""))
                    .ok_or_else(|| serde::de::Error::custom(format!("ground truth `{s}` is neither an option letter nor a number"))),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionMethod {
    Tag,
    Fallback,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub question_id: String,
    pub task_type: TaskType,
    pub raw_model_output: String,
    #[serde(deserialize_with = "deserialize_truth")]
    pub ground_truth: Answer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extracted_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extraction_method: Option<ExtractionMethod>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extraction {
    pub text: String,
    pub method: ExtractionMethod,
}

static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"-?\d+(?:\.\d+)?").expect("valid regex"));
static LETTER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b[A-D]\b").expect("valid regex"));

pub fn first_number(text: &str) -> Option<f64> {
    NUMBER.find(text).and_then(|m| m.as_str().parse().ok())
}

fn last_match(re: &Regex, text: &str) -> Option<(usize, String)> {
    re.find_iter(text).last().map(|m| (m.start(), m.as_str().to_string()))
}

/// Answer text from a model output: the answer tags of a well-formed CoT,
/// else whichever of the last option letter or last number comes later.
pub fn extract_answer(raw: &str) -> Extraction {
    extract_with(raw, None, &ParseOptions::default())
}

/// Like [`extract_answer`], but the fallback only looks for the kind of
/// answer the task family expects.
pub fn extract_answer_for(raw: &str, task_type: TaskType) -> Extraction {
    extract_with(raw, Some(task_type), &ParseOptions::default())
}

pub fn extract_with(raw: &str, task_type: Option<TaskType>, options: &ParseOptions) -> Extraction {
    if let Ok(doc) = parse_with(raw, options) {
        return Extraction {
            text: doc.answer,
            method: ExtractionMethod::Tag,
        };
    }
    let letter = if task_type.is_some_and(TaskType::is_numeric) {
        None
    } else {
        last_match(&LETTER, raw)
    };
    let number = if task_type.is_some_and(TaskType::is_multiple_choice) {
        None
    } else {
        last_match(&NUMBER, raw)
    };
    let best = match (letter, number) {
        (Some(l), Some(n)) => Some(if l.0 > n.0 { l } else { n }),
        (l, n) => l.or(n),
    };
    match best {
        Some((_, text)) => Extraction {
            text,
            method: ExtractionMethod::Fallback,
        },
        None => Extraction {
            text: String::new(),
            method: ExtractionMethod::None,
        },
    }
}

/// Score in [0, 1] of an extracted answer against the truth.
pub fn score_answer(extracted: &str, truth: &Answer, thresholds: &[f64]) -> Result<f64, RewardError> {
    match truth {
        Answer::Choice(c) => Ok(mcq_accuracy(extracted, *c) as f64),
        Answer::Numeric { value, .. } => match first_number(extracted) {
            Some(pred) => mra(pred, *value, thresholds),
            None => Ok(0.0),
        },
    }
}

/// Whether an answer counts as correct for filtering generated data:
/// the right letter, or a number within the tightest default MRA threshold.
pub fn answer_matches(extracted: &str, truth: &Answer) -> bool {
    match truth {
        Answer::Choice(c) => extract_option_letters(extracted) == vec![*c],
        Answer::Numeric { .. } => score_answer(extracted, truth, &default_thresholds()).is_ok_and(|s| s == 1.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreConfig {
    pub thresholds: Vec<f64>,
    pub strict: bool,
    pub run_id: String,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            thresholds: default_thresholds(),
            strict: false,
            run_id: "run".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub n: usize,
    /// Mean score on a 0-100 scale; `None` when the family has no records.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordError {
    pub line: usize,
    pub question_id: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub run_id: String,
    pub thresholds: Vec<f64>,
    pub extraction: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub per_task: BTreeMap<TaskType, TaskScore>,
    /// Unweighted mean of the per-task scores that exist; `None` means no data.
    pub overall: Option<f64>,
    pub metadata: ReportMetadata,
    pub errors: Vec<RecordError>,
}

impl ScoreReport {
    pub fn total(&self) -> usize {
        self.per_task.values().map(|t| t.n).sum()
    }
}

/// Mean of the scores present, or `None` if there are none.
pub fn overall_score(per_task: &BTreeMap<TaskType, TaskScore>) -> Option<f64> {
    let present: Vec<f64> = per_task.values().filter_map(|t| t.score).collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

/// Scores already-parsed records. Duplicate ids after the first are
/// reported as errors and skipped (or abort in strict mode).
pub fn score_records(records: &[PredictionRecord], config: &ScoreConfig) -> Result<ScoreReport, EvalError> {
    let numbered: Vec<(usize, PredictionRecord)> = records.iter().cloned().enumerate().map(|(i, r)| (i + 1, r)).collect();
    score_numbered(numbered, Vec::new(), config)
}

fn score_numbered(
    records: Vec<(usize, PredictionRecord)>,
    mut errors: Vec<RecordError>,
    config: &ScoreConfig,
) -> Result<ScoreReport, EvalError> {
    if config.thresholds.is_empty() {
        return Err(RewardError::EmptyThresholds.into());
    }
    let mut sums: BTreeMap<TaskType, (usize, f64)> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    let mut methods: BTreeMap<String, usize> = BTreeMap::new();
    for (line, record) in records {
        if !seen.insert(record.question_id.clone()) {
            let message = format!("duplicate question_id `{}`", record.question_id);
            if config.strict {
                return Err(EvalError::Strict { line, message });
            }
            errors.push(RecordError {
                line,
                question_id: Some(record.question_id.clone()),
                message,
            });
            continue;
        }
        let mismatch = matches!(
            (&record.ground_truth, record.task_type.is_multiple_choice()),
            (Answer::Choice(_), false) | (Answer::Numeric { .. }, true)
        );
        if mismatch {
            let message = format!("ground truth `{}` does not fit {}", record.ground_truth, record.task_type);
            if config.strict {
                return Err(EvalError::Strict { line, message });
            }
            errors.push(RecordError {
                line,
                question_id: Some(record.question_id.clone()),
                message,
            });
            continue;
        }
        let extraction = extract_answer_for(&record.raw_model_output, record.task_type);
        let method = serde_json::to_value(extraction.method).expect("enum serializes");
        *methods.entry(method.as_str().unwrap_or("none").to_string()).or_default() += 1;
        let score = score_answer(&extraction.text, &record.ground_truth, &config.thresholds)?;
        let entry = sums.entry(record.task_type).or_default();
        entry.0 += 1;
        entry.1 += score;
    }
    let per_task: BTreeMap<TaskType, TaskScore> = TaskType::ALL
        .iter()
        .map(|&t| {
            let (n, total) = sums.get(&t).copied().unwrap_or((0, 0.0));
            let score = (n > 0).then(|| 100.0 * total / n as f64);
            (t, TaskScore { n, score })
        })
        .collect();
    Ok(ScoreReport {
        overall: overall_score(&per_task),
        per_task,
        metadata: ReportMetadata {
            run_id: config.run_id.clone(),
            thresholds: config.thresholds.clone(),
            extraction: methods,
        },
        errors,
    })
}

/// Reads and scores a predictions file. Unparseable lines are listed in
/// `errors` and excluded, unless `strict` is set.
pub fn score_run(path: &Path, config: &ScoreConfig) -> Result<ScoreReport, EvalError> {
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (line, text) in jsonl::lines(path)? {
        match serde_json::from_str::<PredictionRecord>(&text) {
            Ok(r) => records.push((line, r)),
            Err(e) if config.strict => {
                return Err(EvalError::Strict {
                    line,
                    message: e.to_string(),
                })
            }
            Err(e) => {
                let question_id = serde_json::from_str::<serde_json::Value>(&text)
                    .ok()
                    .and_then(|v| v.get("question_id").and_then(|q| q.as_str()).map(String::from));
                errors.push(RecordError {
                    line,
                    question_id,
                    message: e.to_string(),
                });
            }
        }
    }
    score_numbered(records, errors, config)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    TextTable,
    Csv,
}

fn cell(score: Option<f64>) -> String {
    score.map_or_else(|| "-".to_string(), |s| format!("{s:.2}"))
}

/// Overall followed by the eight family columns.
pub fn render_text_table(report: &ScoreReport) -> String {
    let mut headers = vec!["Overall".to_string()];
    let mut values = vec![cell(report.overall)];
    for t in TaskType::ALL {
        headers.push(t.column_label().to_string());
        values.push(cell(report.per_task.get(&t).and_then(|s| s.score)));
    }
    let widths: Vec<usize> = headers.iter().zip(&values).map(|(h, v)| h.len().max(v.len())).collect();
    let row = |items: &[String]| {
        items
            .iter()
            .zip(&widths)
            .map(|(s, w)| format!("{s:>w$}"))
            .collect::<Vec<_>>()
            .join(" | ")
    };
    let mut out = String::new();
    let _ = writeln!(out, "{}", row(&headers));
    let _ = writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-"));
    let _ = writeln!(out, "{}", row(&values));
    if !report.errors.is_empty() {
        let _ = writeln!(out, "\n{} record(s) excluded:", report.errors.len());
        for e in &report.errors {
            let _ = writeln!(out, "  line {}: {}", e.line, e.message);
        }
    }
    out
}

/// Columns `task,n,score`: one row per family in report order, then `overall`.
/// Empty score means no data.
pub fn render_csv(report: &ScoreReport) -> String {
    let mut out = String::from("task,n,score\n");
    for t in TaskType::ALL {
        let s = report.per_task.get(&t).cloned().unwrap_or(TaskScore { n: 0, score: None });
        let _ = writeln!(out, "{},{},{}", t.as_str(), s.n, s.score.map(|v| v.to_string()).unwrap_or_default());
    }
    let _ = writeln!(
        out,
        "overall,{},{}",
        report.total(),
        report.overall.map(|v| v.to_string()).unwrap_or_default()
    );
    out
}

/// Inverse of [`render_csv`]: `(task, n, score)` rows.
pub fn parse_csv(text: &str) -> Result<Vec<(String, usize, Option<f64>)>, EvalError> {
    let mut lines = text.lines();
    if lines.next() != Some("task,n,score") {
        return Err(EvalError::Csv("missing `task,n,score` header".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let parts: Vec<&str> = l.split(',').collect();
            if parts.len() != 3 {
                return Err(EvalError::Csv(format!("row `{l}` does not have 3 columns")));
            }
            let n = parts[1].parse().map_err(|_| EvalError::Csv(format!("bad count in `{l}`")))?;
            let score = match parts[2] {
                "" => None,
                s => Some(s.parse().map_err(|_| EvalError::Csv(format!("bad score in `{l}`")))?),
            };
            Ok((parts[0].to_string(), n, score))
        })
        .collect()
}

pub fn emit_report(report: &ScoreReport, format: ReportFormat, path: &Path) -> Result<(), EvalError> {
    let text = match format {
        ReportFormat::TextTable => render_text_table(report),
        ReportFormat::Csv => render_csv(report),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}
