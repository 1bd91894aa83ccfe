use std::path::Path;
use std::process::{Command, Output};

fn egomind(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_egomind"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn simulate_is_deterministic_and_handles_zero_scenes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(egomind(d, &["simulate", "--seed", "1", "--n-scenes", "5", "--out", "a.jsonl"]).status.code(), Some(0));
    assert_eq!(egomind(d, &["simulate", "--seed", "1", "--n-scenes", "5", "--out", "b.jsonl"]).status.code(), Some(0));
    assert_eq!(std::fs::read(d.join("a.jsonl")).unwrap(), std::fs::read(d.join("b.jsonl")).unwrap());
    assert_eq!(egomind(d, &["simulate", "--n-scenes", "0", "--out", "e.jsonl"]).status.code(), Some(0));
    assert!(std::fs::read(d.join("e.jsonl")).unwrap().is_empty());
}

#[test]
fn validate_cot_counts_injected_corruptions() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(egomind(d, &["simulate", "--seed", "4", "--n-scenes", "1", "--out", "ds.jsonl"]).status.code(), Some(0));
    assert_eq!(egomind(d, &["gen-data", "--dataset", "ds.jsonl", "--out", "gen"]).status.code(), Some(0));
    let text = std::fs::read_to_string(d.join("gen/sft.jsonl")).unwrap();
    let mut lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    for (i, line) in lines.iter_mut().enumerate().filter(|(i, _)| i % 4 == 1) {
        let t = line["target_text"].as_str().unwrap().replace("<answer>", if i % 8 == 1 { "" } else { "<answer><answer>" });
        line["target_text"] = t.into();
    }
    let injected = (0..lines.len()).filter(|i| i % 4 == 1).count();
    let mixed: String = lines.iter().map(|l| format!("{l}\n")).collect();
    std::fs::write(d.join("mixed.jsonl"), mixed).unwrap();
    let out = egomind(d, &["validate-cot", "mixed.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    let text = stdout(&out);
    assert_eq!(text.lines().filter(|l| l.starts_with("FAIL")).count(), injected, "{text}");
    assert!(text.lines().filter(|l| l.starts_with("FAIL")).all(|l| l.contains(" error at ")), "{text}");
    assert_eq!(egomind(d, &["validate-cot", "gen/sft.jsonl"]).status.code(), Some(0));
}

#[test]
fn grpo_check_flags_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let flat = r#"{"question_id":"flat","rollouts":[{"reward":1,"policy_logprobs":[-1],"old_logprobs":[-1],"ref_logprobs":[-1]},{"reward":1,"policy_logprobs":[-1],"old_logprobs":[-1],"ref_logprobs":[-1]}]}"#;
    std::fs::write(d.join("flat.jsonl"), format!("{flat}\n")).unwrap();
    let out = egomind(d, &["grpo-check", "flat.jsonl"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("zero-variance"));
    let bad = flat.replacen("[-1]", "[0.5]", 1);
    std::fs::write(d.join("bad.jsonl"), format!("{bad}\n")).unwrap();
    let out = egomind(d, &["grpo-check", "bad.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).starts_with("ERROR flat"));
}

#[test]
fn operational_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.toml"), "[reward]\nw_fromat = 0.3\n").unwrap();
    assert_eq!(egomind(d, &["--config", "bad.toml", "simulate", "--n-scenes", "1"]).status.code(), Some(2));
    assert_eq!(egomind(d, &["score", "missing.jsonl"]).status.code(), Some(2));
    assert_eq!(egomind(d, &["gen-data", "--jobs", "missing.jsonl", "--fixtures", "f.jsonl"]).status.code(), Some(2));
}

#[test]
fn score_strict_mode_rejects_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let rec = r#"{"question_id":"q","task_type":"room_size","raw_model_output":"<answer>20</answer>","ground_truth":20}"#;
    std::fs::write(d.join("p.jsonl"), format!("{rec}\n{rec}\n")).unwrap();
    let lenient = egomind(d, &["score", "p.jsonl", "--out", "r", "--format", "csv"]);
    assert_eq!(lenient.status.code(), Some(0));
    assert!(stdout(&lenient).contains("1 record(s) excluded"));
    let csv = std::fs::read_to_string(d.join("r/report.csv")).unwrap();
    assert!(csv.contains("room_size,1,100\n"), "{csv}");
    assert_eq!(egomind(d, &["score", "p.jsonl", "--strict"]).status.code(), Some(1));
}

#[test]
fn config_file_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.toml"), "[simulator]\nn_frames = 4\nmin_objects = 8\nmax_objects = 8\n").unwrap();
    assert_eq!(egomind(d, &["--config", "c.toml", "simulate", "--n-scenes", "1", "--out", "s.jsonl"]).status.code(), Some(0));
    let record: serde_json::Value = serde_json::from_str(std::fs::read_to_string(d.join("s.jsonl")).unwrap().trim()).unwrap();
    assert_eq!(record["trajectory"].as_array().unwrap().len(), 4);
    assert_eq!(record["scene"]["placed_objects"].as_array().unwrap().len(), 8);
}
