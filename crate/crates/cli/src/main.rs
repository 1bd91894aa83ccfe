//! `egomind`: simulator, trace validation, scoring, GRPO audit and data
//! generation behind one config file.
//!
//! Exit codes: 0 success, 1 validation failures present, 2 operational error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use egomind_core::config::Config;
use egomind_core::cot::{self, parse_with};
use egomind_core::eval::{emit_report, render_text_table, score_run, ReportFormat};
use egomind_core::jsonl;
use egomind_core::pipeline::backend::{ChatBackend, HttpBackend, MockBackend};
use egomind_core::pipeline::simulated::jobs_from_records;
use egomind_core::pipeline::{run_pipeline, GenerationJob, JobStatus, PipelineError};
use egomind_core::reward::{grpo_audit, RolloutGroup};
use egomind_core::sim::dataset::{simulate_dataset, SceneRecord};
use egomind_core::sim::oracle::oracle_answer;

#[derive(Parser)]
#[command(name = "egomind", version, about = "Egocentric spatial reasoning toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML config file; built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// Treat recoverable problems in inputs as failures.
    #[arg(long, global = true)]
    strict: bool,
    /// Chat-completions endpoint; overrides GEN_BACKEND_URL and the config.
    #[arg(long, global = true)]
    backend_url: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate seeded scenes, trajectories and questions as JSONL.
    Simulate {
        #[arg(long, default_value_t = 10)]
        n_scenes: usize,
    },
    /// Check reasoning traces against the tag and section grammar.
    ValidateCot {
        file: PathBuf,
        /// Record field holding the trace; by default the first of
        /// target_text, raw_model_output, text, cot.
        #[arg(long)]
        field: Option<String>,
    },
    /// Score a predictions file per task family.
    Score {
        predictions: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Both)]
        format: Format,
    },
    /// Recompute advantages, surrogates, KL and the objective per rollout group.
    GrpoCheck { groups: PathBuf },
    /// Run the generation pipeline.
    GenData {
        /// Jobs JSONL.
        #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
        jobs: Option<PathBuf>,
        /// Simulated dataset; jobs and replay fixtures are derived from it.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Replay fixtures for the mock backend.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        /// Call the configured HTTP backend instead of the mock.
        #[arg(long)]
        live: bool,
        /// Use only the first N jobs.
        #[arg(long)]
        limit: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
    Both,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let g = cli.global;
    let mut config = match &g.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(p) = g.parallelism {
        config.pipeline.parallelism = p;
    }
    if g.strict {
        config.score.strict = true;
    }
    config.validate()?;
    match cli.command {
        Command::Simulate { n_scenes } => simulate(&config, g.seed.unwrap_or(0), n_scenes, g.out.as_deref()),
        Command::ValidateCot { file, field } => validate_cot(&config, &file, field.as_deref(), g.strict, g.out.as_deref()),
        Command::Score { predictions, format } => score(&config, &predictions, format, g.out.as_deref()),
        Command::GrpoCheck { groups } => grpo_check(&config, &groups, g.out.as_deref()),
        Command::GenData {
            jobs,
            dataset,
            fixtures,
            live,
            limit,
        } => gen_data(&config, &g, jobs, dataset, fixtures, live, limit),
    }
}

fn code(failures: usize) -> ExitCode {
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn simulate(config: &Config, seed: u64, n_scenes: usize, out: Option<&Path>) -> Result<ExitCode> {
    let out = out.unwrap_or(Path::new("dataset.jsonl"));
    let records = simulate_dataset(seed, n_scenes, &config.simulator)?;
    let mut inconsistent = 0;
    let mut questions = 0;
    for record in &records {
        for q in &record.questions {
            questions += 1;
            let again = oracle_answer(&record.scene, &record.trajectory, q, &config.simulator.constants);
            if q.validate().is_err() || again.ok().as_ref() != q.ground_truth.as_ref() {
                eprintln!("inconsistent question {}", q.id);
                inconsistent += 1;
            }
        }
    }
    jsonl::write(out, &records)?;
    let skipped: usize = records.iter().map(|r| r.skipped.len()).sum();
    println!(
        "{} scene(s), {questions} question(s), {skipped} skipped family draw(s) -> {}",
        records.len(),
        out.display()
    );
    Ok(code(inconsistent))
}

fn trace_text(value: &Value, field: Option<&str>) -> Option<String> {
    if let Value::String(s) = value {
        return Some(s.clone());
    }
    let fields: &[&str] = match field {
        Some(f) => &[f][..],
        None => &["target_text", "raw_model_output", "text", "cot"],
    };
    fields.iter().find_map(|f| value.get(*f).and_then(Value::as_str).map(String::from))
}

fn validate_cot(config: &Config, file: &Path, field: Option<&str>, strict: bool, out: Option<&Path>) -> Result<ExitCode> {
    let mut verdicts = Vec::new();
    let mut failures = 0;
    for (line, text) in jsonl::lines(file)? {
        let id = serde_json::from_str::<Value>(&text).ok();
        let trace = id.as_ref().and_then(|v| trace_text(v, field));
        let record_id = id
            .as_ref()
            .and_then(|v| v.get("sample_id").or_else(|| v.get("question_id")))
            .and_then(Value::as_str)
            .map(String::from);
        let verdict = match trace {
            None => Err("no trace text in record".to_string()),
            Some(t) => match parse_with(&t, &config.cot) {
                Err(e) => Err(e.to_string()),
                Ok(doc) => {
                    let warnings = cot::validate(&doc);
                    if strict && !warnings.is_empty() {
                        Err(format!("warnings: {}", warnings.join("; ")))
                    } else {
                        Ok(warnings)
                    }
                }
            },
        };
        let label = record_id.clone().unwrap_or_else(|| format!("line {line}"));
        match &verdict {
            Ok(_) => println!("PASS {label}"),
            Err(e) => {
                failures += 1;
                println!("FAIL {label}: {e}");
            }
        }
        verdicts.push(json!({
            "line": line,
            "id": record_id,
            "pass": verdict.is_ok(),
            "error": verdict.as_ref().err(),
            "warnings": verdict.as_ref().ok(),
        }));
    }
    println!("{} passed, {failures} failed", verdicts.len() - failures);
    if let Some(out) = out {
        jsonl::write(out, &verdicts)?;
    }
    Ok(code(failures))
}

fn score(config: &Config, predictions: &Path, format: Format, out: Option<&Path>) -> Result<ExitCode> {
    let report = match score_run(predictions, &config.score) {
        Ok(r) => r,
        Err(egomind_core::eval::EvalError::Strict { line, message }) => {
            eprintln!("{}:{line}: {message}", predictions.display());
            return Ok(ExitCode::from(1));
        }
        Err(e) => return Err(e.into()),
    };
    print!("{}", render_text_table(&report));
    if let Some(dir) = out {
        if matches!(format, Format::Text | Format::Both) {
            emit_report(&report, ReportFormat::TextTable, &dir.join("report.txt"))?;
        }
        if matches!(format, Format::Csv | Format::Both) {
            emit_report(&report, ReportFormat::Csv, &dir.join("report.csv"))?;
        }
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn grpo_check(config: &Config, groups: &Path, out: Option<&Path>) -> Result<ExitCode> {
    let mut rows = Vec::new();
    let mut failures = 0;
    for (line, text) in jsonl::lines(groups)? {
        let mut value: Value = serde_json::from_str(&text).with_context(|| format!("{}:{line}", groups.display()))?;
        if let Some(obj) = value.as_object_mut() {
            obj.entry("epsilon").or_insert(json!(config.reward.epsilon));
            obj.entry("beta").or_insert(json!(config.reward.beta));
        }
        let group: RolloutGroup = serde_json::from_value(value).with_context(|| format!("{}:{line}", groups.display()))?;
        let audit = match grpo_audit(&group, config.reward.kl_reduction) {
            Ok(a) => a,
            Err(e) => {
                failures += 1;
                println!("ERROR {}: {e}", group.question_id);
                rows.push(json!({"question_id": group.question_id, "error": e.to_string()}));
                continue;
            }
        };
        let mut notes = Vec::new();
        let mut violations = Vec::new();
        if audit.advantages.iter().all(|a| *a == 0.0) {
            notes.push("zero-variance group: all advantages are zero".to_string());
        } else {
            let n = audit.advantages.len() as f64;
            let mean = audit.advantages.iter().sum::<f64>() / n;
            let std = (audit.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
            if mean.abs() > 1e-9 || (std - 1.0).abs() > 1e-6 {
                violations.push(format!("advantages not standardized (mean {mean:e}, std {std})"));
            }
        }
        for (i, ((r, a), s)) in audit.ratios.iter().zip(&audit.advantages).zip(&audit.surrogates).enumerate() {
            let clamped = r.clamp(1.0 - group.epsilon, 1.0 + group.epsilon);
            if *s > r * a + 1e-12 || *s > clamped * a + 1e-12 {
                violations.push(format!("rollout {i}: surrogate above its bound"));
            }
        }
        if let Some(i) = audit.kl.iter().position(|k| *k < 0.0) {
            violations.push(format!("rollout {i}: negative KL"));
        }
        let status = if violations.is_empty() { "OK" } else { "VIOLATION" };
        failures += usize::from(!violations.is_empty());
        println!(
            "{status} {}: objective {:.12e}, clipped {}/{}{}",
            audit.question_id,
            audit.objective,
            audit.clipped,
            audit.ratios.len(),
            notes.iter().chain(&violations).map(|n| format!("; {n}")).collect::<String>()
        );
        let mut row = serde_json::to_value(&audit)?;
        row["notes"] = json!(notes);
        row["violations"] = json!(violations);
        rows.push(row);
    }
    if let Some(out) = out {
        jsonl::write(out, &rows)?;
    }
    Ok(code(failures))
}

fn gen_data(
    config: &Config,
    g: &Global,
    jobs: Option<PathBuf>,
    dataset: Option<PathBuf>,
    fixtures: Option<PathBuf>,
    live: bool,
    limit: Option<usize>,
) -> Result<ExitCode> {
    let out = g.out.clone().unwrap_or_else(|| PathBuf::from("gen"));
    let templates = config.pipeline.templates()?;
    let (mut job_list, mut mock) = match (&jobs, &dataset) {
        (_, Some(path)) => {
            let records: Vec<SceneRecord> = jsonl::read(path)?;
            let (jobs, fixtures) = jobs_from_records(&records, &config.psa)?;
            jsonl::write(&out.join("jobs.jsonl"), &jobs)?;
            jsonl::write(&out.join("fixtures.jsonl"), &fixtures)?;
            (jobs, Some(MockBackend::new(fixtures)))
        }
        (Some(path), None) => (jsonl::read::<GenerationJob>(path)?, None),
        (None, None) => bail!("one of --jobs or --dataset is required"),
    };
    if let Some(path) = &fixtures {
        mock = Some(MockBackend::from_file(path)?);
    }
    if let Some(n) = limit {
        job_list.truncate(n);
    }
    let http;
    let backend: &dyn ChatBackend = if live {
        let mut backend_config = config.backend.clone();
        if let Some(url) = &g.backend_url {
            backend_config.url = Some(url.clone());
        }
        http = match &g.backend_url {
            Some(url) => HttpBackend::new(url, std::env::var("GEN_BACKEND_KEY").ok(), &backend_config),
            None => HttpBackend::from_env(&backend_config)?,
        };
        &http
    } else {
        match &mock {
            Some(m) => m,
            None => bail!("no backend: pass --fixtures for replay or --live for the HTTP backend"),
        }
    };
    let outcome = match run_pipeline(job_list, backend, &templates, &config.pipeline, &out) {
        Ok(o) => o,
        Err(PipelineError::Interrupted) => bail!("run interrupted; rerun the same command to resume"),
        Err(e) => return Err(e.into()),
    };
    let failed = outcome.manifest.count(|s| matches!(s, JobStatus::Failed { .. }));
    let done = outcome.manifest.count(|s| *s == JobStatus::Done);
    let rejected = done - outcome.sft.len();
    println!(
        "{done} done, {failed} failed, {rejected} rejected by quality check; {} sft, {} rl record(s); {} tokens -> {}",
        outcome.sft.len(),
        outcome.rl.len(),
        outcome.manifest.totals.total(),
        out.display()
    );
    Ok(code(failed + rejected))
}
