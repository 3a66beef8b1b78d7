use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

fn guiagent(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_guiagent"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| {
        panic!(
            "{e}\nstdout: {}\nstderr: {}",
            String::from_utf8_lossy(&o.stdout),
            String::from_utf8_lossy(&o.stderr)
        )
    })
}

fn mock(rel: &str) -> String {
    format!("mock:{}", fixture(rel).display())
}

fn run_search(out: &Path) -> Output {
    guiagent(&[
        "run",
        "--mode",
        "end2end",
        "--goal",
        "Find kettles under $50",
        "--env",
        &mock("search/env.json"),
        "--endpoint",
        &mock("search/model.json"),
        "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn run_success_writes_trajectory_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("traj/search.jsonl");
    let o = run_search(&out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = stdout_json(&o);
    assert_eq!(summary["outcome"]["kind"], "success");
    assert_eq!(summary["steps"], 3);
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 5);
    let sidecar: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("traj/search.jsonl.meta.json")).unwrap())
            .unwrap();
    assert_eq!(sidecar["seed"], 0);
}

#[test]
fn run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    assert_eq!(code(&run_search(&a)), 0);
    assert_eq!(code(&run_search(&b)), 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn run_budget_exhaustion_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("loop.jsonl");
    let o = guiagent(&[
        "run",
        "--goal",
        "wait forever",
        "--env",
        &mock("loop/env.json"),
        "--endpoint",
        &mock("loop/model.json"),
        "--t-max",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    assert_eq!(stdout_json(&o)["outcome"]["kind"], "max_steps");
}

#[test]
fn run_usage_errors_exit_sixty_four() {
    let o = guiagent(&[
        "run",
        "--goal",
        "g",
        "--env",
        &mock("search/env.json"),
        "--out",
        "/tmp/x.jsonl",
    ]);
    assert_eq!(code(&o), 64, "missing endpoint");
    let o = guiagent(&[
        "run",
        "--mode",
        "policy-executor",
        "--goal",
        "g",
        "--env",
        &mock("search/env.json"),
        "--endpoint",
        &mock("search/model.json"),
        "--out",
        "/tmp/x.jsonl",
    ]);
    assert_eq!(code(&o), 64, "missing planner endpoint");
    let o = guiagent(&["run", "--bogus"]);
    assert_eq!(code(&o), 64, "unknown flag");
}

#[test]
fn run_batch_writes_every_episode() {
    let dir = tempfile::tempdir().unwrap();
    let batch = dir.path().join("batch.jsonl");
    let lines: Vec<String> = (0..3)
        .map(|i| {
            serde_json::json!({
                "goal": format!("goal {i}"),
                "env": mock("search/env.json"),
                "out": dir.path().join(format!("ep{i}.jsonl")),
            })
            .to_string()
        })
        .collect();
    std::fs::write(&batch, lines.join("\n")).unwrap();
    let o = guiagent(&[
        "run",
        "--batch",
        batch.to_str().unwrap(),
        "--endpoint",
        &mock("search/model.json"),
        "--jobs",
        "3",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_json(&o).as_array().unwrap().len(), 3);
    for i in 0..3 {
        assert!(dir.path().join(format!("ep{i}.jsonl")).exists());
    }
}

#[test]
fn score_reports_totals() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("t.jsonl");
    assert_eq!(code(&run_search(&traj)), 0);
    let report_path = dir.path().join("report.json");
    let o = guiagent(&[
        "score",
        "--traj",
        traj.to_str().unwrap(),
        "--labels",
        fixture("search/labels.jsonl").to_str().unwrap(),
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = stdout_json(&o);
    assert_eq!(report["steps"][1]["breakdown"]["r_agent"], 2.0);
    assert_eq!(report["totals"]["count"], 3);
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(report_path).unwrap()).unwrap();
    assert_eq!(saved, report);
}

#[test]
fn score_empty_trajectory_is_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("empty.jsonl");
    let labels = dir.path().join("labels.jsonl");
    std::fs::write(&traj, "").unwrap();
    std::fs::write(&labels, "").unwrap();
    let o = guiagent(&[
        "score",
        "--traj",
        traj.to_str().unwrap(),
        "--labels",
        labels.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let report = stdout_json(&o);
    assert_eq!(report["steps"].as_array().unwrap().len(), 0);
    assert_eq!(report["totals"]["total"], 0.0);
}

#[test]
fn score_unparsable_grounding_gets_zero() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("t.jsonl");
    assert_eq!(code(&run_search(&traj)), 0);
    let o = guiagent(&[
        "score",
        "--traj",
        traj.to_str().unwrap(),
        "--labels",
        fixture("search/sg_labels.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let b = &stdout_json(&o)["steps"][0]["breakdown"];
    assert_eq!(b["r_agent"], 0.0);
    assert!(b["r_penalty"].as_f64().unwrap() < 0.0);
}

#[test]
fn score_rejects_labels_for_missing_steps() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("t.jsonl");
    assert_eq!(code(&run_search(&traj)), 0);
    let labels = dir.path().join("labels.jsonl");
    std::fs::write(
        &labels,
        r#"{"t":9,"tag":"AGENT","truth":{"action":"pyautogui.wait()"}}"#,
    )
    .unwrap();
    let o = guiagent(&[
        "score",
        "--traj",
        traj.to_str().unwrap(),
        "--labels",
        labels.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 65);
}

fn ilg(out: &Path, jobs: &str) -> Output {
    guiagent(&[
        "ilg",
        "synth",
        "--meta",
        fixture("ilg/meta").to_str().unwrap(),
        "--backgrounds",
        fixture("ilg/backgrounds").to_str().unwrap(),
        "--n",
        "4",
        "--seed",
        "7",
        "--jobs",
        jobs,
        "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn ilg_output_is_deterministic_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&ilg(&a, "1")), 0);
    assert_eq!(code(&ilg(&b, "4")), 0);
    let samples = std::fs::read_to_string(a.join("samples.jsonl")).unwrap();
    assert_eq!(samples, std::fs::read_to_string(b.join("samples.jsonl")).unwrap());
    for line in samples.lines() {
        let rec: Value = serde_json::from_str(line).unwrap();
        let name = rec["image"].as_str().unwrap();
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap()
        );
        let img = image::open(a.join(name)).unwrap();
        let (x, y) = (
            rec["point"][0].as_u64().unwrap() as u32,
            rec["point"][1].as_u64().unwrap() as u32,
        );
        assert!(x < img.width() && y < img.height());
    }
    assert_eq!(samples.lines().count(), 4);
}

#[test]
fn pwce_check_reports_the_ln2_fixture() {
    let o = guiagent(&[
        "pwce",
        "check",
        "--batch",
        fixture("pwce/ln2.json").to_str().unwrap(),
        "--gradient",
    ]);
    assert_eq!(code(&o), 0);
    let r = stdout_json(&o);
    let total = r["loss_total"].as_f64().unwrap();
    assert!((total - 1.09 * std::f64::consts::LN_2).abs() < 1e-6);
    assert_eq!(r["gradient"].as_array().unwrap().len(), 2);
}

#[test]
fn pwce_config_overrides_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "[pwce]\nlambda = 0.0\n").unwrap();
    let o = guiagent(&[
        "--config",
        cfg.to_str().unwrap(),
        "pwce",
        "check",
        "--batch",
        fixture("pwce/ln2.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout_json(&o)["loss_total"].as_f64().unwrap(), std::f64::consts::LN_2);
    std::fs::write(&cfg, "[pwce]\nbeta = 0.5\n").unwrap();
    let o = guiagent(&[
        "--config",
        cfg.to_str().unwrap(),
        "pwce",
        "check",
        "--batch",
        fixture("pwce/ln2.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 64);
}

#[test]
fn synth_data_with_mock_teacher() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ata.jsonl");
    let o = guiagent(&[
        "synth",
        "data",
        "--task",
        "ata",
        "--in",
        fixture("synth/ata_inputs.jsonl").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--endpoint",
        &mock("synth/teacher.json"),
        "--retries",
        "1",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let counts = stdout_json(&o);
    assert_eq!(
        counts,
        serde_json::json!({"total": 3, "accepted": 1, "rejected": 1, "duplicates": 1})
    );
    let records: Vec<Value> = std::fs::read_to_string(out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records[0]["status"], "accepted");
    assert_eq!(records[1]["status"], "rejected");
    assert_eq!(records[1]["retry_count"], 1);
}

#[test]
fn synth_missing_placeholder_exits_sixty_five() {
    let dir = tempfile::tempdir().unwrap();
    let o = guiagent(&[
        "synth",
        "data",
        "--task",
        "gp",
        "--in",
        fixture("synth/gp_missing_goal.jsonl").to_str().unwrap(),
        "--out",
        dir.path().join("gp.jsonl").to_str().unwrap(),
        "--endpoint",
        &mock("synth/teacher.json"),
    ]);
    assert_eq!(code(&o), 65);
}

#[test]
fn help_lists_every_flag() {
    let expect: &[(&[&str], &[&str])] = &[
        (&["--help"], &["run", "score", "ilg", "synth", "pwce", "--config"]),
        (
            &["run", "--help"],
            &[
                "--mode",
                "--goal",
                "--env",
                "--endpoint",
                "--planner-endpoint",
                "--planner-prompt",
                "--out",
                "--seed",
                "--t-max",
                "--batch",
                "--jobs",
            ],
        ),
        (&["score", "--help"], &["--traj", "--labels", "--out"]),
        (
            &["ilg", "synth", "--help"],
            &[
                "--meta",
                "--backgrounds",
                "--n",
                "--distractors",
                "--seed",
                "--out",
                "--jobs",
            ],
        ),
        (
            &["synth", "data", "--help"],
            &["--task", "--in", "--out", "--endpoint", "--retries", "--jobs"],
        ),
        (&["pwce", "check", "--help"], &["--batch", "--gradient"]),
    ];
    for (args, flags) in expect {
        let o = guiagent(args);
        assert_eq!(code(&o), 0, "{args:?}");
        let text = String::from_utf8_lossy(&o.stdout);
        for flag in *flags {
            assert!(text.contains(flag), "{args:?} help lacks {flag}:\n{text}");
        }
    }
}
