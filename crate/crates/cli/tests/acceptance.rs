//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use egomind_core::config::Config;
use egomind_core::cot::{format_reward, format_reward_bytes, parse, render, CotDocument, PsaSection, RpcBlock};
use egomind_core::eval::{parse_csv, render_csv, score_run, PredictionRecord, ScoreConfig};
use egomind_core::jsonl;
use egomind_core::pipeline::backend::{Fixture, MockBackend};
use egomind_core::pipeline::simulated::jobs_from_records;
use egomind_core::pipeline::templates::Templates;
use egomind_core::pipeline::{run_pipeline, GenerationJob, PipelineConfig, PipelineError, Stage, FORMAT_CRITERION};
use egomind_core::psa::{answer_from_graph, build_task_context, PsaConfig, SceneAnnotations};
use egomind_core::question::{Answer, TaskType};
use egomind_core::reward::{clipped_surrogate, combined_reward, default_thresholds, group_advantages, kl_penalty, mra};
use egomind_core::scene_graph::{merge_observations, MergeMode};
use egomind_core::sim::dataset::{simulate_dataset, DatasetConfig, SceneRecord};
use egomind_core::sim::oracle::{oracle_answer, visible_frames};
use egomind_core::sim::{apply_transition, classify_transition};

type Check = Result<String, String>;
type Criterion = (u8, &'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("took {:.2} s, limit {limit_s} s", elapsed.as_secs_f64())
    })
}

fn reward_constants() -> Check {
    let c = Config::default();
    let (wf, wa) = (c.reward.w_format, c.reward.w_accuracy);
    ensure((wf, wa) == (0.2, 0.8), || format!("default weights {wf}, {wa}"))?;
    let full = combined_reward(1.0, 1.0, wf, wa).map_err(|e| e.to_string())?;
    let format_only = combined_reward(1.0, 0.0, wf, wa).map_err(|e| e.to_string())?;
    ensure(full == 1.0, || format!("R(1,1) = {full}"))?;
    ensure(format_only == 0.2, || format!("R(1,0) = {format_only}"))?;
    Ok(format!("R(1,1) = {full}, R(1,0) = {format_only}"))
}

fn mra_suite() -> Check {
    let start = Instant::now();
    let t = default_thresholds();
    for (pred, truth, want) in [(9.0, 10.0, 0.8), (10.0, 10.0, 1.0), (25.0, 10.0, 0.0)] {
        let got = mra(pred, truth, &t).map_err(|e| e.to_string())?;
        ensure((got - want).abs() <= 1e-9, || format!("mra({pred}, {truth}) = {got}, want {want}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10_000 {
        let truth: f64 = rng.gen_range(-1e3..1e3);
        if truth == 0.0 {
            continue;
        }
        let (e1, e2): (f64, f64) = (rng.gen_range(0.0..2e3), rng.gen_range(0.0..2e3));
        let (near, far) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let a = mra(truth + sign * near, truth, &t).map_err(|e| e.to_string())?;
        let b = mra(truth + sign * far, truth, &t).map_err(|e| e.to_string())?;
        ensure(a >= b, || format!("not monotone at truth {truth}: {near} -> {a}, {far} -> {b}"))?;
    }
    within(start.elapsed(), 1.0)?;
    Ok("hand values exact; monotone over 10^4 pairs".into())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn pop_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn grpo_invariants() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut standardized = 0;
    for _ in 0..10_000 {
        let g = rng.gen_range(2..=64);
        let binary = rng.gen_bool(0.5);
        let rewards: Vec<f64> = (0..g)
            .map(|_| if binary { f64::from(u8::from(rng.gen_bool(0.5))) } else { rng.gen_range(-5.0..5.0) })
            .collect();
        let a = group_advantages(&rewards).map_err(|e| e.to_string())?;
        ensure(mean(&a).abs() <= 1e-12, || format!("advantage mean {:e} for {rewards:?}", mean(&a)))?;
        if pop_std(&rewards) > 0.0 {
            standardized += 1;
            ensure((pop_std(&a) - 1.0).abs() <= 1e-9, || format!("advantage std {} for {rewards:?}", pop_std(&a)))?;
            let scale = rng.gen_range(0.01..100.0);
            let shift = rng.gen_range(-100.0..100.0);
            let moved: Vec<f64> = rewards.iter().map(|r| scale * r + shift).collect();
            let b = group_advantages(&moved).map_err(|e| e.to_string())?;
            let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            ensure(worst <= 1e-9, || format!("affine drift {worst:e} (scale {scale}, shift {shift})"))?;
        } else {
            ensure(a.iter().all(|x| *x == 0.0), || "zero-variance group gave nonzero advantages".into())?;
        }
    }
    let textbook = group_advantages(&[1.0, 0.0, 1.0, 0.0]).map_err(|e| e.to_string())?;
    ensure(textbook == [1.0, -1.0, 1.0, -1.0], || format!("[1,0,1,0] -> {textbook:?}"))?;
    for _ in 0..10_000 {
        let n = rng.gen_range(1..40);
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-15.0..0.0)).collect();
        let mut q = p.clone();
        ensure(kl_penalty(&p, &q).map_err(|e| e.to_string())? == 0.0, || "KL of equal sequences is not 0".into())?;
        let i = rng.gen_range(0..n);
        q[i] = rng.gen_range(-15.0..0.0);
        let k = kl_penalty(&p, &q).map_err(|e| e.to_string())?;
        ensure(if p == q { k == 0.0 } else { k > 0.0 }, || format!("KL {k} for differing sequences"))?;
    }
    for _ in 0..100_000 {
        let r: f64 = rng.gen_range(0.0..4.0);
        let adv: f64 = rng.gen_range(-10.0..10.0);
        let eps: f64 = rng.gen_range(0.01..0.99);
        let v = clipped_surrogate(r, adv, eps);
        let tol = 1e-12;
        let mut ok = v <= r * adv + tol && v <= r.clamp(1.0 - eps, 1.0 + eps) * adv + tol;
        if adv > 0.0 {
            ok &= v <= (1.0 + eps) * adv + tol && v >= r.min(1.0 - eps) * adv - tol;
        } else if adv < 0.0 {
            ok &= v <= (1.0 - eps) * adv + tol && v >= r.max(1.0 + eps) * adv - tol;
        }
        ensure(ok, || format!("surrogate bound broken at r {r}, A {adv}, eps {eps}: {v}"))?;
    }
    within(start.elapsed(), 5.0)?;
    Ok(format!(
        "10^4 groups ({standardized} with spread), 10^4 KL pairs, 10^5 surrogate triples"
    ))
}

/// Log-ratio whose per-token estimate exp(d) - d - 1 equals `target`.
fn kl_log_ratio(target: f64) -> f64 {
    let mut d: f64 = 1.0;
    for _ in 0..100 {
        let f = d.exp() - d - 1.0 - target;
        d -= f / (d.exp() - 1.0);
    }
    d
}

fn cli_objectives(dir: &Path, beta: f64, kl: f64) -> Result<Vec<f64>, String> {
    let d = kl_log_ratio(kl);
    let group = serde_json::json!({
        "question_id": "hand",
        "epsilon": 0.2,
        "beta": beta,
        "rollouts": [
            {"reward": 1.0, "policy_logprobs": [-2.0], "old_logprobs": [-2.0], "ref_logprobs": [-2.0 + d]},
            {"reward": 0.0, "policy_logprobs": [-2.0], "old_logprobs": [-2.0], "ref_logprobs": [-2.0 + d]}
        ]
    });
    let input = dir.join(format!("groups-{beta}.jsonl"));
    let report = dir.join(format!("audit-{beta}.jsonl"));
    jsonl::write(&input, &[group]).map_err(|e| e.to_string())?;
    let status = Command::new(env!("CARGO_BIN_EXE_egomind"))
        .args(["grpo-check", input.to_str().unwrap(), "--out", report.to_str().unwrap()])
        .output()
        .map_err(|e| e.to_string())?;
    ensure(status.status.success(), || {
        format!("grpo-check exited {:?}: {}", status.status.code(), String::from_utf8_lossy(&status.stdout))
    })?;
    let rows: Vec<serde_json::Value> = jsonl::read(&report).map_err(|e| e.to_string())?;
    rows.iter()
        .map(|r| r["objective"].as_f64().ok_or_else(|| format!("no objective in {r}")))
        .collect()
}

fn objective_composition() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let zero = cli_objectives(dir.path(), 0.0, 0.3)?[0];
    ensure(zero.abs() <= 1e-12, || format!("beta 0 objective {zero:e}"))?;
    let penalized = cli_objectives(dir.path(), 1e-4, 0.3)?[0];
    ensure((penalized + 3e-5).abs() <= 1e-12, || format!("beta 1e-4 objective {penalized:e}"))?;
    Ok(format!("objective {zero:e} and {penalized:e}"))
}

const WORDS: [&str; 16] = [
    "chair", "table", "left", "right", "door", "lamp", "near", "behind", "sofa", "window", "walk", "turn", "red",
    "small", "two", "shelf",
];

fn sentence(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(1..8);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

fn random_doc(rng: &mut ChaCha8Rng) -> CotDocument {
    let mut rpc = vec![RpcBlock::frame(&sentence(rng))];
    for _ in 0..rng.gen_range(0..5) {
        rpc.push(RpcBlock::transition(&sentence(rng)));
        rpc.push(RpcBlock::frame(&sentence(rng)));
    }
    let targets: Vec<String> = (0..rng.gen_range(0..3)).map(|i| format!("{}#{i}", WORDS[rng.gen_range(0..16)])).collect();
    let mut candidates = targets.clone();
    candidates.extend((0..rng.gen_range(0..3)).map(|i| format!("obj{i}")));
    let paragraph = |rng: &mut ChaCha8Rng| (0..rng.gen_range(1..4)).map(|_| sentence(rng)).collect::<Vec<_>>().join("\n");
    CotDocument {
        summary: paragraph(rng),
        rpc_narrative: rpc,
        psa: PsaSection {
            targets,
            candidates,
            relations: (0..rng.gen_range(0..4)).map(|_| sentence(rng)).collect(),
            notes: (0..rng.gen_range(0..2)).map(|_| format!("note {}", sentence(rng))).collect(),
        },
        reasoning: paragraph(rng),
        answer: if rng.gen_bool(0.5) {
            ['A', 'B', 'C', 'D'][rng.gen_range(0..4)].to_string()
        } else {
            format!("{:.1}", rng.gen_range(0.0..50.0))
        },
    }
}

fn fuzz_case(rng: &mut ChaCha8Rng, base: &str) -> String {
    const TOKENS: [&str; 10] = [
        "<think>", "</think>", "<answer>", "</answer>", "## Summary\n", "## Role-Play Caption\n",
        "## Progressive Spatial Analysis\n", "## Reasoning\n", "[Frame 1] x\n", "\n",
    ];
    match rng.gen_range(0..8) {
        0 => {
            let cut = rng.gen_range(0..=base.len());
            base.char_indices().map(|(i, _)| i).take_while(|i| *i <= cut).last().map_or(String::new(), |i| base[..i].to_string())
        }
        1 => {
            let tag = TOKENS[rng.gen_range(0..4)];
            base.replacen(tag, "", 1)
        }
        2 => {
            let tag = TOKENS[rng.gen_range(0..8)];
            let at = base.find('\n').unwrap_or(0);
            format!("{}{tag}{}", &base[..at], &base[at..])
        }
        3 => {
            let depth = rng.gen_range(1..2000);
            format!("{}{base}{}", "<think>".repeat(depth), "</think>".repeat(depth))
        }
        4 => (0..rng.gen_range(0..40)).map(|_| *TOKENS.choose(rng).unwrap()).collect(),
        5 => base.to_string(),
        6 => format!("\n  {}\n\n", base.replacen("\n", "\n\n", rng.gen_range(0..4))),
        _ => {
            let n = rng.gen_range(0..200);
            (0..n).map(|_| rng.gen_range(0x20u8..0x7f) as char).collect()
        }
    }
}

fn cot_round_trip() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut rendered = Vec::new();
    for i in 0..1000 {
        let doc = random_doc(&mut rng);
        let text = render(&doc).map_err(|e| format!("doc {i}: render failed: {e}"))?;
        let back = parse(&text).map_err(|e| format!("doc {i}: {e}"))?;
        ensure(back == doc, || format!("doc {i} did not round-trip"))?;
        rendered.push(text);
    }
    let mut accepted = 0;
    for i in 0..10_000 {
        let base = &rendered[i % rendered.len()];
        let case = fuzz_case(&mut rng, base);
        let outcome = catch_unwind(AssertUnwindSafe(|| {
            (format_reward(&case), parse(&case).is_ok(), format_reward_bytes(case.as_bytes()))
        }));
        let (reward, parsed, bytes) = outcome.map_err(|_| format!("panic on fuzz case {i}"))?;
        ensure((reward == 1) == parsed, || format!("reward {reward} but parse ok = {parsed} on case {i}"))?;
        ensure(bytes == reward, || format!("byte and text rewards differ on case {i}"))?;
        accepted += usize::from(parsed);
    }
    let raw: Vec<u8> = (0..4096).map(|_| rng.gen()).collect();
    catch_unwind(|| format_reward_bytes(&raw)).map_err(|_| "panic on random bytes".to_string())?;
    within(start.elapsed(), 10.0)?;
    Ok(format!("1000 round trips; 10^4 fuzz cases ({accepted} well-formed), no panics"))
}

fn scenes() -> &'static [SceneRecord] {
    static SCENES: std::sync::OnceLock<Vec<SceneRecord>> = std::sync::OnceLock::new();
    SCENES.get_or_init(|| simulate_dataset(1000, 200, &DatasetConfig::default()).expect("simulation"))
}

fn psa_oracle() -> Check {
    let start = Instant::now();
    let config = DatasetConfig::default();
    let records = scenes();
    let sim_time = start.elapsed();
    let psa = PsaConfig::default();
    let required = [
        TaskType::ObjectCount,
        TaskType::AppearanceOrder,
        TaskType::RelativeDistance,
        TaskType::RelativeDirection,
    ];
    let mut counts: BTreeMap<TaskType, (usize, usize)> = BTreeMap::new();
    for r in records {
        let n = r.scene.placed_objects.len();
        ensure((8..=16).contains(&n) && r.trajectory.len() == 16, || format!("scene {} has {n} objects", r.seed))?;
        let graph = merge_observations(&r.observations, &r.transitions, MergeMode::PreserveIds).map_err(|e| e.to_string())?;
        let annotations = SceneAnnotations::from_scene(&r.scene);
        for q in &r.questions {
            let truth = oracle_answer(&r.scene, &r.trajectory, q, &config.constants).map_err(|e| e.to_string())?;
            let ours = build_task_context(&graph, q, &psa).and_then(|ctx| answer_from_graph(&graph, &ctx, q, Some(&annotations)));
            let entry = counts.entry(q.task_type).or_default();
            entry.0 += 1;
            if ours.as_ref().ok() == Some(&truth) {
                entry.1 += 1;
            } else if required.contains(&q.task_type) {
                return Err(format!("{} mismatch: graph {ours:?}, oracle {truth}", q.id));
            }
        }
    }
    for family in required {
        ensure(counts.get(&family).is_some_and(|c| c.0 > 0), || format!("no {family} questions generated"))?;
    }
    within(start.elapsed(), 10.0)?;
    let summary: Vec<String> = counts.iter().map(|(t, (n, ok))| format!("{t} {ok}/{n}")).collect();
    Ok(format!("200 scenes simulated in {:.2} s; {}", sim_time.as_secs_f64(), summary.join(", ")))
}

fn graph_faithfulness() -> Check {
    let start = Instant::now();
    let constants = DatasetConfig::default().constants;
    let mut pairs = 0;
    for r in scenes() {
        let graph = merge_observations(&r.observations, &r.transitions, MergeMode::PreserveIds).map_err(|e| e.to_string())?;
        let visible = visible_frames(&r.scene, &r.trajectory);
        let ours: Vec<&String> = graph.objects().keys().collect();
        let truth: Vec<&String> = visible.keys().collect();
        ensure(ours == truth, || format!("scene {}: graph objects differ from visibility union", r.seed))?;
        for (id, frames) in &visible {
            let node = graph.object(id).map_err(|e| e.to_string())?;
            ensure(frames.first() == Some(&node.first_frame), || format!("scene {}: first frame of {id}", r.seed))?;
        }
        for (i, poses) in r.trajectory.windows(2).enumerate() {
            let t = classify_transition(i, &poses[0], &poses[1], &constants).map_err(|e| e.to_string())?;
            let replay = apply_transition(&poses[0], t.translation, t.rotation, &constants);
            let dh = (replay.heading - poses[1].heading).sin().abs();
            ensure(replay.position.distance(poses[1].position) <= 1e-9 && dh <= 1e-9, || {
                format!("scene {} pair {i} does not round-trip", r.seed)
            })?;
            ensure(t == r.transitions[i], || format!("scene {} pair {i}: classified move differs", r.seed))?;
            pairs += 1;
        }
    }
    within(start.elapsed(), 10.0)?;
    Ok(format!("200 object sets identical; {pairs} pose pairs round-trip"))
}

fn pipeline_run(jobs: &[GenerationJob], mock: &MockBackend, dir: &Path) -> Result<egomind_core::pipeline::RunOutcome, PipelineError> {
    let config = PipelineConfig {
        backoff_ms: 0,
        ..PipelineConfig::default()
    };
    run_pipeline(jobs.to_vec(), mock, &Templates::default(), &config, dir)
}

fn pipeline_golden() -> Check {
    let start = Instant::now();
    let records = simulate_dataset(77, 1, &DatasetConfig::default()).map_err(|e| e.to_string())?;
    let (mut jobs, fixtures) = jobs_from_records(&records, &PsaConfig::default()).map_err(|e| e.to_string())?;
    jobs.truncate(10);
    ensure(jobs.len() == 10, || format!("only {} jobs", jobs.len()))?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = pipeline_run(&jobs, &MockBackend::new(fixtures.clone()), dir.path()).map_err(|e| e.to_string())?;
    ensure(out.sft.len() == 10, || format!("{} SFT records", out.sft.len()))?;
    ensure(out.sft.iter().all(|s| format_reward(&s.target_text) == 1), || "an SFT target fails the format".into())?;

    let victim = jobs[3].trace_id(Stage::MergeCot);
    let corrupted: Vec<Fixture> = fixtures
        .iter()
        .cloned()
        .map(|mut f| {
            if f.trace_id == victim {
                f.text = f.text.replace("</answer>", "");
            }
            f
        })
        .collect();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = pipeline_run(&jobs, &MockBackend::new(corrupted), dir.path()).map_err(|e| e.to_string())?;
    let failures: Vec<(String, String)> = out
        .jobs
        .iter()
        .flat_map(|j| j.verdicts.iter().filter(|v| !v.pass).map(|v| (j.sample_id.clone(), v.criterion.clone())))
        .collect();
    ensure(failures == [(jobs[3].sample_id.clone(), FORMAT_CRITERION.to_string())], || format!("failures {failures:?}"))?;
    ensure(
        out.sft.len() == 9 && out.sft.iter().all(|s| s.sample_id != jobs[3].sample_id),
        || "corrupted job still emitted".into(),
    )?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mock = MockBackend::new(fixtures);
    mock.abort_after(Some(23));
    ensure(
        matches!(pipeline_run(&jobs, &mock, dir.path()), Err(PipelineError::Interrupted)),
        || "simulated kill did not interrupt the run".into(),
    )?;
    mock.abort_after(None);
    let out = pipeline_run(&jobs, &mock, dir.path()).map_err(|e| e.to_string())?;
    let calls = mock.calls();
    let duplicates = calls.values().filter(|&&n| n > 1).count();
    ensure(duplicates == 0 && calls.len() == 60, || format!("{duplicates} duplicated traces, {} traces", calls.len()))?;
    ensure(out.sft.len() == 10, || "resumed run incomplete".into())?;
    within(start.elapsed(), 5.0)?;
    Ok("10/10 SFT; one Format & Correctness failure; resume after kill with 0 duplicate calls".into())
}

fn harness_aggregation() -> Check {
    let targets = [54.51, 37.94, 67.12, 40.35, 44.08, 47.21, 31.96, 58.41];
    let mut records = Vec::new();
    for (family, target) in TaskType::ALL.into_iter().zip(targets) {
        let correct = (target * 100.0_f64).round() as usize;
        for i in 0..10_000 {
            let hit = i < correct;
            let (truth, output) = if family.is_numeric() {
                (Answer::numeric(10.0, ""), if hit { "<answer>10</answer>" } else { "<answer>100</answer>" })
            } else {
                (Answer::Choice('A'), if hit { "<answer>A</answer>" } else { "<answer>B</answer>" })
            };
            records.push(PredictionRecord {
                question_id: format!("{family}-{i}"),
                task_type: family,
                raw_model_output: output.into(),
                ground_truth: truth,
                extracted_answer: None,
                extraction_method: None,
            });
        }
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("predictions.jsonl");
    jsonl::write(&path, &records).map_err(|e| e.to_string())?;
    let report = score_run(&path, &ScoreConfig::default()).map_err(|e| e.to_string())?;
    for (family, target) in TaskType::ALL.into_iter().zip(targets) {
        let got = report.per_task[&family].score.unwrap_or(f64::NAN);
        ensure((got - target).abs() <= 1e-9, || format!("{family}: {got}, want {target}"))?;
    }
    let overall = report.overall.ok_or("no overall score")?;
    ensure((overall - 47.6975).abs() <= 1e-9, || format!("overall {overall}"))?;
    let rows = parse_csv(&render_csv(&report)).map_err(|e| e.to_string())?;
    ensure(rows.last().and_then(|r| r.2) == Some(overall), || "csv does not round-trip the overall score".into())?;
    Ok(format!("overall {overall:.10}"))
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_egomind"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.code() == Some(0), || {
        format!(
            "`egomind {}` exited {:?}: {}{}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn end_to_end() -> Check {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    run_cli(d, &["simulate", "--seed", "11", "--n-scenes", "3", "--out", "dataset.jsonl"])?;
    run_cli(d, &["gen-data", "--dataset", "dataset.jsonl", "--out", "gen"])?;
    run_cli(d, &["validate-cot", "gen/sft.jsonl"])?;
    run_cli(d, &["score", "gen/predictions.jsonl", "--out", "report"])?;
    ensure(d.join("report/report.csv").exists(), || "no csv report".into())?;
    within(start.elapsed(), 60.0)?;
    Ok(format!("simulate -> gen-data -> validate-cot -> score in {:.2} s", start.elapsed().as_secs_f64()))
}

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "reward constants", reward_constants),
        (2, "MRA hand suite and monotonicity", mra_suite),
        (3, "GRPO invariants", grpo_invariants),
        (4, "objective composition via grpo-check", objective_composition),
        (5, "CoT round trip and format-reward fuzz", cot_round_trip),
        (6, "PSA-oracle equivalence", psa_oracle),
        (7, "graph faithfulness", graph_faithfulness),
        (8, "pipeline golden run", pipeline_golden),
        (9, "harness aggregation", harness_aggregation),
        (10, "end-to-end CLI smoke", end_to_end),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        let start = Instant::now();
        let result = catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {id:>2} {name} ({secs:.2} s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {id:>2} {name} ({secs:.2} s): {why}");
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
