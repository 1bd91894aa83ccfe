//! Staged LLM pipeline that turns frames and a question into a structured
//! reasoning trace, plus the training records assembled from it.
//!
//! Each job runs six stages in order. Every stage result is journaled, so a
//! rerun over the same output directory skips finished stages.

pub mod backend;
pub mod journal;
pub mod simulated;
pub mod templates;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{LazyLock, Mutex};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cot::{parse_with, ParseOptions};
use crate::eval::{answer_matches, PredictionRecord};
use crate::jsonl::{self, JsonlError};
use crate::question::{Answer, StructuredQuestion, TaskType};
use crate::scene_graph::FrameObservation;

use backend::{BackendError, BackendRequest, ChatBackend, TokenUsage, UserPart};
use journal::{EntryStatus, Journal, JournalEntry, JournalState};
use templates::{TemplateError, Templates};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}:{line}: corrupt journal entry: {message}")]
    CorruptJournal { path: PathBuf, line: usize, message: String },
    #[error("duplicate sample_id `{0}`")]
    DuplicateSample(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("run interrupted; rerun to resume from the journal")]
    Interrupted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    CaptionFrames,
    InferTransitions,
    SynthesizeRpc,
    ExtractContext,
    MergeCot,
    QualityCheck,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::CaptionFrames,
        Stage::InferTransitions,
        Stage::SynthesizeRpc,
        Stage::ExtractContext,
        Stage::MergeCot,
        Stage::QualityCheck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::CaptionFrames => "caption_frames",
            Stage::InferTransitions => "infer_transitions",
            Stage::SynthesizeRpc => "synthesize_rpc",
            Stage::ExtractContext => "extract_context",
            Stage::MergeCot => "merge_cot",
            Stage::QualityCheck => "quality_check",
        }
    }

    pub fn index(self) -> usize {
        Stage::ALL.iter().position(|s| *s == self).expect("listed")
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

/// Model hint sent with each stage's requests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageModels {
    pub caption_frames: String,
    pub infer_transitions: String,
    pub synthesize_rpc: String,
    pub extract_context: String,
    pub merge_cot: String,
    pub quality_check: String,
}

impl Default for StageModels {
    fn default() -> Self {
        StageModels {
            caption_frames: "gpt-4o".into(),
            infer_transitions: "gpt-4o".into(),
            synthesize_rpc: "qwen2.5-72b".into(),
            extract_context: "gpt-4o".into(),
            merge_cot: "gpt-4o".into(),
            quality_check: "gemini-2.5-pro".into(),
        }
    }
}

impl StageModels {
    pub fn for_stage(&self, stage: Stage) -> &str {
        match stage {
            Stage::CaptionFrames => &self.caption_frames,
            Stage::InferTransitions => &self.infer_transitions,
            Stage::SynthesizeRpc => &self.synthesize_rpc,
            Stage::ExtractContext => &self.extract_context,
            Stage::MergeCot => &self.merge_cot,
            Stage::QualityCheck => &self.quality_check,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub parallelism: usize,
    /// Attempts per stage call, including the first.
    pub retry_limit: u32,
    pub backoff_ms: u64,
    pub max_backoff_ms: u64,
    /// Total tokens the run may spend; calls stop once it is reached.
    pub token_budget: Option<u64>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub models: StageModels,
    pub templates_dir: Option<PathBuf>,
    pub cot: ParseOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            parallelism: 4,
            retry_limit: 3,
            backoff_ms: 200,
            max_backoff_ms: 10_000,
            token_budget: None,
            temperature: 0.2,
            max_output_tokens: 4096,
            models: StageModels::default(),
            templates_dir: None,
            cot: ParseOptions::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::InvalidConfig(m.into()));
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1");
        }
        if self.retry_limit == 0 {
            return bad("retry_limit must be at least 1");
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad("temperature must lie in [0, 2]");
        }
        if self.max_output_tokens == 0 {
            return bad("max_output_tokens must be positive");
        }
        self.cot.markers.validate().map_err(PipelineError::InvalidConfig)
    }

    pub fn templates(&self) -> Result<Templates, PipelineError> {
        let templates = match &self.templates_dir {
            Some(dir) => Templates::load(dir)?,
            None => Templates::default(),
        };
        templates.validate()?;
        Ok(templates)
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64 << (attempt.saturating_sub(1)).min(20);
        Duration::from_millis(self.backoff_ms.saturating_mul(factor).min(self.max_backoff_ms))
    }
}

/// A frame given either as an image reference or as a textual observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FrameInput {
    Image { image_url: String },
    Observation(FrameObservation),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum JobQuestion {
    Structured(StructuredQuestion),
    FreeText(String),
}

impl JobQuestion {
    pub fn prompt_text(&self) -> String {
        match self {
            JobQuestion::Structured(q) => q.prompt_text(),
            JobQuestion::FreeText(t) => t.clone(),
        }
    }

    pub fn task_type(&self) -> Option<TaskType> {
        match self {
            JobQuestion::Structured(q) => Some(q.task_type),
            JobQuestion::FreeText(_) => None,
        }
    }

    pub fn ground_truth(&self) -> Option<&Answer> {
        match self {
            JobQuestion::Structured(q) => q.ground_truth.as_ref(),
            JobQuestion::FreeText(_) => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum JobStatus {
    #[default]
    Pending,
    StageComplete {
        completed: usize,
    },
    Done,
    Failed {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityVerdict {
    pub criterion: String,
    pub pass: bool,
    pub rationale: String,
}

pub const CRITERIA: [&str; 3] = ["Hallucination Check", "Logical Consistency", "Format & Correctness"];
pub const FORMAT_CRITERION: &str = "Format & Correctness";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationJob {
    pub sample_id: String,
    pub frames: Vec<FrameInput>,
    pub question: JobQuestion,
    #[serde(default)]
    pub stage_outputs: BTreeMap<Stage, String>,
    #[serde(default)]
    pub status: JobStatus,
    #[serde(default)]
    pub attempts: BTreeMap<Stage, u32>,
    #[serde(default)]
    pub verdicts: Vec<QualityVerdict>,
    #[serde(default)]
    pub usage: TokenUsage,
}

impl GenerationJob {
    pub fn new(sample_id: &str, frames: Vec<FrameInput>, question: JobQuestion) -> Self {
        GenerationJob {
            sample_id: sample_id.to_string(),
            frames,
            question,
            stage_outputs: BTreeMap::new(),
            status: JobStatus::Pending,
            attempts: BTreeMap::new(),
            verdicts: Vec::new(),
            usage: TokenUsage::default(),
        }
    }

    pub fn trace_id(&self, stage: Stage) -> String {
        format!("{}/{}", self.sample_id, stage)
    }

    pub fn passed_quality(&self) -> bool {
        self.status == JobStatus::Done && self.verdicts.len() == CRITERIA.len() && self.verdicts.iter().all(|v| v.pass)
    }

    fn frames_text(&self) -> String {
        self.frames
            .iter()
            .enumerate()
            .map(|(i, f)| match f {
                FrameInput::Image { .. } => format!("Frame {}: <image {}>", i + 1, i + 1),
                FrameInput::Observation(o) if o.description.trim().is_empty() => format!("Frame {}: {}", i + 1, o.describe()),
                FrameInput::Observation(o) => format!("Frame {}: {}", i + 1, o.description),
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Replays journaled results for this job; stops at the first stage
    /// without a completed entry.
    pub fn restore(&mut self, state: &JournalState) {
        for stage in Stage::ALL {
            match state.get(&(self.sample_id.clone(), stage)) {
                Some(e) if e.status == EntryStatus::Complete => {
                    self.stage_outputs.insert(stage, e.output.clone());
                    self.attempts.insert(stage, e.attempts);
                    self.usage.add(e.usage);
                    if let Some(v) = &e.verdicts {
                        self.verdicts = v.clone();
                    }
                    self.status = if stage == Stage::QualityCheck {
                        JobStatus::Done
                    } else {
                        JobStatus::StageComplete {
                            completed: stage.index() + 1,
                        }
                    };
                }
                _ => break,
            }
        }
    }
}

static VERDICT_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?im)^[\s*#>-]*(hallucination check|logical consistency|format\s*(?:&|and)\s*correctness)[^\w\n]*?:[^\w\n]*(pass|fail)\b[ \t:\-–.]*(.*)$")
        .expect("valid regex")
});

/// Reads one PASS/FAIL line per criterion. All three must be present; the
/// first line for a criterion wins.
pub fn parse_verdicts(text: &str) -> Result<Vec<QualityVerdict>, String> {
    let mut found: BTreeMap<usize, QualityVerdict> = BTreeMap::new();
    for c in VERDICT_LINE.captures_iter(text) {
        let name = c[1].to_lowercase();
        let index = if name.starts_with("halluc") {
            0
        } else if name.starts_with("logical") {
            1
        } else {
            2
        };
        found.entry(index).or_insert_with(|| QualityVerdict {
            criterion: CRITERIA[index].to_string(),
            pass: c[2].eq_ignore_ascii_case("pass"),
            rationale: c[3].trim().to_string(),
        });
    }
    let missing: Vec<&str> = (0..3).filter(|i| !found.contains_key(i)).map(|i| CRITERIA[i]).collect();
    if !missing.is_empty() {
        return Err(format!("malformed quality verdict: missing {}", missing.join(", ")));
    }
    Ok(found.into_values().collect())
}

/// Local checks behind the format criterion: the trace must parse and its
/// answer must match the ground truth when there is one.
pub fn local_format_check(cot: &str, question: &JobQuestion, options: &ParseOptions) -> Result<(), String> {
    let doc = parse_with(cot, options).map_err(|e| format!("local parse failed: {e}"))?;
    match question.ground_truth() {
        Some(truth) if !answer_matches(&doc.answer, truth) => {
            Err(format!("answer `{}` does not match reference `{truth}`", doc.answer))
        }
        _ => Ok(()),
    }
}

fn apply_local_check(verdicts: &mut [QualityVerdict], check: Result<(), String>) {
    if let Err(reason) = check {
        for v in verdicts.iter_mut().filter(|v| v.criterion == FORMAT_CRITERION) {
            v.pass = false;
            v.rationale = format!("local check: {reason}");
        }
    }
}

enum StageError {
    Failed(String),
    Interrupted,
    Fatal(PipelineError),
}

/// Executes stages against a backend, journaling each result.
pub struct Runner<'a> {
    backend: &'a dyn ChatBackend,
    templates: &'a Templates,
    config: &'a PipelineConfig,
    journal: Option<&'a Journal>,
    tokens_used: AtomicU64,
    interrupted: AtomicBool,
}

impl<'a> Runner<'a> {
    pub fn new(
        backend: &'a dyn ChatBackend,
        templates: &'a Templates,
        config: &'a PipelineConfig,
        journal: Option<&'a Journal>,
    ) -> Self {
        Runner {
            backend,
            templates,
            config,
            journal,
            tokens_used: AtomicU64::new(0),
            interrupted: AtomicBool::new(false),
        }
    }

    pub fn tokens_used(&self) -> u64 {
        self.tokens_used.load(Ordering::SeqCst)
    }

    pub fn interrupted(&self) -> bool {
        self.interrupted.load(Ordering::SeqCst)
    }

    fn request(&self, job: &GenerationJob, stage: Stage) -> Result<BackendRequest, TemplateError> {
        let mut values: BTreeMap<&str, String> = BTreeMap::new();
        values.insert("frames", job.frames_text());
        values.insert("frame_count", job.frames.len().to_string());
        values.insert("question", job.question.prompt_text());
        values.insert(
            "task_type",
            job.question.task_type().map_or("free_text", TaskType::as_str).to_string(),
        );
        values.insert("instruction", self.templates.instruction.clone());
        values.insert(
            "ground_truth",
            job.question.ground_truth().map_or_else(|| "not provided".to_string(), |a| a.to_string()),
        );
        for (name, from) in [
            ("captions", Stage::CaptionFrames),
            ("transitions", Stage::InferTransitions),
            ("rpc", Stage::SynthesizeRpc),
            ("context", Stage::ExtractContext),
            ("cot", Stage::MergeCot),
        ] {
            if let Some(out) = job.stage_outputs.get(&from) {
                values.insert(name, out.clone());
            }
        }
        let template = self.templates.get(stage);
        let (system_text, user) = template.render(&values)?;
        let mut user_parts = vec![UserPart::Text { text: user }];
        if template.placeholders().contains("frames") {
            user_parts.extend(job.frames.iter().filter_map(|f| match f {
                FrameInput::Image { image_url } => Some(UserPart::ImageUrl { url: image_url.clone() }),
                FrameInput::Observation(_) => None,
            }));
        }
        Ok(BackendRequest {
            model_hint: self.config.models.for_stage(stage).to_string(),
            system_text,
            user_parts,
            temperature: self.config.temperature,
            max_output_tokens: self.config.max_output_tokens,
            trace_id: job.trace_id(stage),
        })
    }

    fn record(&self, entry: JournalEntry) -> Result<(), StageError> {
        match self.journal {
            Some(j) => j.append(&entry).map_err(StageError::Fatal),
            None => Ok(()),
        }
    }

    fn fail(&self, job: &mut GenerationJob, stage: Stage, attempts: u32, output: String, reason: String) -> StageError {
        job.attempts.insert(stage, attempts);
        let entry = JournalEntry {
            sample_id: job.sample_id.clone(),
            stage,
            status: EntryStatus::Failed,
            output,
            attempts,
            usage: TokenUsage::default(),
            error: Some(reason.clone()),
            verdicts: None,
        };
        match self.record(entry) {
            Ok(()) => StageError::Failed(reason),
            Err(e) => e,
        }
    }

    fn run_stage(&self, job: &mut GenerationJob, stage: Stage) -> Result<(), StageError> {
        let request = match self.request(job, stage) {
            Ok(r) => r,
            Err(e) => return Err(self.fail(job, stage, 0, String::new(), format!("template: {e}"))),
        };
        let mut attempt = 0;
        let response = loop {
            attempt += 1;
            if self.config.token_budget.is_some_and(|b| self.tokens_used() >= b) {
                return Err(self.fail(job, stage, attempt - 1, String::new(), "token budget exhausted".into()));
            }
            match self.backend.complete(&request) {
                Ok(r) => break r,
                Err(BackendError::Interrupted) => {
                    self.interrupted.store(true, Ordering::SeqCst);
                    return Err(StageError::Interrupted);
                }
                Err(e) if e.is_transient() && attempt < self.config.retry_limit => {
                    log::debug!("{}: attempt {attempt} failed: {e}", request.trace_id);
                    std::thread::sleep(self.config.backoff(attempt));
                }
                Err(e) if e.is_transient() => {
                    let reason = format!("backend-exhausted after {attempt} attempts: {e}");
                    return Err(self.fail(job, stage, attempt, String::new(), reason));
                }
                Err(e) => return Err(self.fail(job, stage, attempt, String::new(), format!("backend: {e}"))),
            }
        };
        self.tokens_used.fetch_add(response.token_usage.total(), Ordering::SeqCst);
        let mut verdicts = None;
        if stage == Stage::QualityCheck {
            let mut parsed = match parse_verdicts(&response.text) {
                Ok(v) => v,
                Err(reason) => return Err(self.fail(job, stage, attempt, response.text, reason)),
            };
            let cot = job.stage_outputs.get(&Stage::MergeCot).map_or("", String::as_str);
            apply_local_check(&mut parsed, local_format_check(cot, &job.question, &self.config.cot));
            verdicts = Some(parsed);
        }
        self.record(JournalEntry {
            sample_id: job.sample_id.clone(),
            stage,
            status: EntryStatus::Complete,
            output: response.text.clone(),
            attempts: attempt,
            usage: response.token_usage,
            error: None,
            verdicts: verdicts.clone(),
        })?;
        job.usage.add(response.token_usage);
        job.attempts.insert(stage, attempt);
        job.stage_outputs.insert(stage, response.text);
        if let Some(v) = verdicts {
            job.verdicts = v;
        }
        job.status = if stage == Stage::QualityCheck {
            JobStatus::Done
        } else {
            JobStatus::StageComplete {
                completed: stage.index() + 1,
            }
        };
        Ok(())
    }

    /// Runs the stages this job has not completed yet.
    pub fn run_job(&self, job: &mut GenerationJob) -> Result<(), PipelineError> {
        for stage in Stage::ALL {
            if job.stage_outputs.contains_key(&stage) {
                continue;
            }
            if self.interrupted() {
                return Err(PipelineError::Interrupted);
            }
            match self.run_stage(job, stage) {
                Ok(()) => {}
                Err(StageError::Failed(reason)) => {
                    log::info!("{}: {stage} failed: {reason}", job.sample_id);
                    job.status = JobStatus::Failed { reason };
                    return Ok(());
                }
                Err(StageError::Interrupted) => return Err(PipelineError::Interrupted),
                Err(StageError::Fatal(e)) => return Err(e),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub status: JobStatus,
    pub stages_completed: usize,
    pub attempts: BTreeMap<Stage, u32>,
    pub usage: TokenUsage,
    pub verdicts: Vec<QualityVerdict>,
    pub sft_emitted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub totals: TokenUsage,
}

impl Manifest {
    pub fn from_jobs(jobs: &[GenerationJob], templates: &Templates, options: &ParseOptions) -> Self {
        let entries: Vec<ManifestEntry> = jobs
            .iter()
            .map(|j| ManifestEntry {
                sample_id: j.sample_id.clone(),
                status: j.status.clone(),
                stages_completed: j.stage_outputs.len(),
                attempts: j.attempts.clone(),
                usage: j.usage,
                verdicts: j.verdicts.clone(),
                sft_emitted: assemble_sft_sample(j, templates, options).is_ok(),
            })
            .collect();
        let mut totals = TokenUsage::default();
        for e in &entries {
            totals.add(e.usage);
        }
        Manifest { entries, totals }
    }

    pub fn count(&self, pred: impl Fn(&JobStatus) -> bool) -> usize {
        self.entries.iter().filter(|e| pred(&e.status)).count()
    }
}

/// Supervised sample: the question with the answer-format instruction, and
/// the verified trace as target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftSample {
    pub sample_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_type: Option<TaskType>,
    pub prompt_text: String,
    pub target_text: String,
}

/// Reinforcement-learning sample: prompt and verifiable answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlSample {
    pub sample_id: String,
    pub task_type: TaskType,
    pub prompt_text: String,
    pub ground_truth: Answer,
    pub frames: Vec<FrameInput>,
}

pub fn training_prompt(question: &str, instruction: &str) -> String {
    format!("{}\n\n{}", question.trim_end(), instruction)
}

/// Fails unless the job finished, passed every quality criterion and its
/// trace parses.
pub fn assemble_sft_sample(job: &GenerationJob, templates: &Templates, options: &ParseOptions) -> Result<SftSample, String> {
    if job.status != JobStatus::Done {
        return Err(format!("{}: job is not done", job.sample_id));
    }
    if let Some(v) = job.verdicts.iter().find(|v| !v.pass) {
        return Err(format!("{}: failed {}: {}", job.sample_id, v.criterion, v.rationale));
    }
    if job.verdicts.len() != CRITERIA.len() {
        return Err(format!("{}: incomplete quality verdicts", job.sample_id));
    }
    let cot = job
        .stage_outputs
        .get(&Stage::MergeCot)
        .ok_or_else(|| format!("{}: no merged trace", job.sample_id))?;
    parse_with(cot, options).map_err(|e| format!("{}: {e}", job.sample_id))?;
    Ok(SftSample {
        sample_id: job.sample_id.clone(),
        task_type: job.question.task_type(),
        prompt_text: training_prompt(&job.question.prompt_text(), &templates.instruction),
        target_text: cot.trim().to_string(),
    })
}

/// Needs a structured question with a ground truth; independent of how the
/// generation stages went.
pub fn assemble_rl_sample(job: &GenerationJob, templates: &Templates) -> Option<RlSample> {
    let JobQuestion::Structured(q) = &job.question else {
        return None;
    };
    Some(RlSample {
        sample_id: job.sample_id.clone(),
        task_type: q.task_type,
        prompt_text: training_prompt(&q.prompt_text(), &templates.instruction),
        ground_truth: q.ground_truth.clone()?,
        frames: job.frames.clone(),
    })
}

/// Merged traces of finished jobs in the scorer's input format.
pub fn prediction_records(jobs: &[GenerationJob]) -> Vec<PredictionRecord> {
    jobs.iter()
        .filter_map(|j| {
            let JobQuestion::Structured(q) = &j.question else {
                return None;
            };
            Some(PredictionRecord {
                question_id: q.id.clone(),
                task_type: q.task_type,
                raw_model_output: j.stage_outputs.get(&Stage::MergeCot)?.clone(),
                ground_truth: q.ground_truth.clone()?,
                extracted_answer: None,
                extraction_method: None,
            })
        })
        .collect()
}

#[derive(Debug)]
pub struct RunOutcome {
    pub jobs: Vec<GenerationJob>,
    pub manifest: Manifest,
    pub sft: Vec<SftSample>,
    pub rl: Vec<RlSample>,
}

pub const JOURNAL_FILE: &str = "journal.jsonl";

/// Runs every job, resuming from `out_dir/journal.jsonl`, then writes
/// `sft.jsonl`, `rl.jsonl`, `manifest.jsonl` and `predictions.jsonl`.
pub fn run_pipeline(
    jobs: Vec<GenerationJob>,
    backend: &dyn ChatBackend,
    templates: &Templates,
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<RunOutcome, PipelineError> {
    config.validate()?;
    templates.validate()?;
    let mut seen = std::collections::BTreeSet::new();
    if let Some(dup) = jobs.iter().find(|j| !seen.insert(j.sample_id.clone())) {
        return Err(PipelineError::DuplicateSample(dup.sample_id.clone()));
    }
    let (journal, state) = Journal::open(&out_dir.join(JOURNAL_FILE))?;
    let jobs: Vec<Mutex<GenerationJob>> = jobs
        .into_iter()
        .map(|mut j| {
            j.restore(&state);
            Mutex::new(j)
        })
        .collect();
    let runner = Runner::new(backend, templates, config, Some(&journal));
    let next = AtomicUsize::new(0);
    let fatal: Mutex<Option<PipelineError>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..config.parallelism.min(jobs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() || runner.interrupted() || fatal.lock().map_or(true, |f| f.is_some()) {
                    break;
                }
                let mut job = jobs[i].lock().unwrap_or_else(|e| e.into_inner());
                match runner.run_job(&mut job) {
                    Ok(()) => {}
                    Err(PipelineError::Interrupted) => break,
                    Err(e) => {
                        if let Ok(mut slot) = fatal.lock() {
                            slot.get_or_insert(e);
                        }
                        break;
                    }
                }
            });
        }
    });
    if let Some(e) = fatal.into_inner().unwrap_or_else(|e| e.into_inner()) {
        return Err(e);
    }
    if runner.interrupted() {
        return Err(PipelineError::Interrupted);
    }
    let jobs: Vec<GenerationJob> = jobs.into_iter().map(|m| m.into_inner().unwrap_or_else(|e| e.into_inner())).collect();
    let manifest = Manifest::from_jobs(&jobs, templates, &config.cot);
    let sft: Vec<SftSample> = jobs
        .iter()
        .filter_map(|j| assemble_sft_sample(j, templates, &config.cot).ok())
        .collect();
    let rl: Vec<RlSample> = jobs.iter().filter_map(|j| assemble_rl_sample(j, templates)).collect();
    jsonl::write(&out_dir.join("sft.jsonl"), &sft)?;
    jsonl::write(&out_dir.join("rl.jsonl"), &rl)?;
    jsonl::write(&out_dir.join("manifest.jsonl"), &manifest.entries)?;
    jsonl::write(&out_dir.join("predictions.jsonl"), &prediction_records(&jobs))?;
    Ok(RunOutcome { jobs, manifest, sft, rl })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_parsing() {
        let text = "Hallucination Check: PASS - fine\n**Logical Consistency**: fail: jumps\nFormat and Correctness: Pass.";
        let v = parse_verdicts(text).unwrap();
        assert_eq!(v.len(), 3);
        assert!(v[0].pass && !v[1].pass && v[2].pass);
        assert_eq!(v[1].rationale, "jumps");
        assert_eq!(v[2].criterion, FORMAT_CRITERION);
        assert!(parse_verdicts("Hallucination Check: PASS\nLogical Consistency: PASS").is_err());
        assert!(parse_verdicts("looks good to me").is_err());
    }

    #[test]
    fn local_check_forces_format_failure() {
        let mut v = parse_verdicts("Hallucination Check: PASS\nLogical Consistency: PASS\nFormat & Correctness: PASS").unwrap();
        let q = JobQuestion::FreeText("how many?".into());
        apply_local_check(&mut v, local_format_check("<answer>3</answer>", &q, &ParseOptions::default()));
        assert!(v[0].pass && v[1].pass && !v[2].pass);
        assert!(v[2].rationale.starts_with("local check"));
    }

    #[test]
    fn backoff_grows_and_caps() {
        let c = PipelineConfig {
            backoff_ms: 100,
            max_backoff_ms: 350,
            ..PipelineConfig::default()
        };
        let ms: Vec<u128> = (1..=4).map(|a| c.backoff(a).as_millis()).collect();
        assert_eq!(ms, [100, 200, 350, 350]);
    }

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.as_str().parse::<Stage>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{s}\""));
        }
        assert_eq!(StageModels::default().for_stage(Stage::SynthesizeRpc), "qwen2.5-72b");
    }
}
