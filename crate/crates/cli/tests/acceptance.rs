//! Acceptance suite: prints one PASS/FAIL line per criterion and fails if any
//! criterion fails or exceeds its time limit.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use guiagent_core::action::{
    parse_action, render_action, validate_action, ActionKind, ActionSpace, AtomicAction, Platform, ScrollDirection,
    TerminateStatus, Violation,
};
use guiagent_core::ilg::{reconstruct, synthesize, DistractorOutcome, GroundingMeta, IlgConfig};
use guiagent_core::orchestrator::{run_mas, run_policy_executor, EpisodeConfig, Outcome};
use guiagent_core::pwce::{masked_cross_entropy, pwce_gradient, pwce_loss, PwceConfig, TokenBatch};
use guiagent_core::rewards::{
    group_advantage, length_penalty, reward_grounding, score, GroundTruth, RewardConfig, TaskTag, TruthPayload,
};
use guiagent_core::runtime::{MockEnv, RecordingClient, Role, RoleConfig, ScriptedModel};
use guiagent_core::structured::{
    extract_tagged, parse_decision, parse_grounding_json, parse_lenient_object, parse_plan_json, parse_planner_turn,
    parse_screen2word,
};
use guiagent_core::synthesis::{validate_output, SynthesisInput, SynthesisTask, Template};
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn manifest() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

fn core_tests() -> PathBuf {
    manifest().join("../core/tests")
}

fn cli_fixture(rel: &str) -> PathBuf {
    manifest().join("tests/fixtures").join(rel)
}

fn guiagent(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_guiagent"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// ---------------------------------------------------------------------------
// 1. PWCE
// ---------------------------------------------------------------------------

fn random_batch(rng: &mut ChaCha8Rng) -> TokenBatch {
    let (b, l, v) = (rng.gen_range(1..4), rng.gen_range(1..6), rng.gen_range(2..8));
    let spread = rng.gen_range(0.1..10.0);
    let logits = (0..b * l * v).map(|_| rng.gen_range(-spread..spread)).collect();
    let labels = (0..b * l).map(|_| rng.gen_range(0..v as i64)).collect();
    let mut mask: Vec<bool> = (0..b * l).map(|_| rng.gen_bool(0.75)).collect();
    let keep = rng.gen_range(0..mask.len());
    mask[keep] = true;
    TokenBatch::new(b, l, v, logits, labels, mask).unwrap()
}

fn criterion_pwce() {
    let cfg = PwceConfig::default();
    let fixture = TokenBatch::new(1, 1, 2, vec![0.0, 0.0], vec![0], vec![true]).unwrap();
    let r = pwce_loss(&fixture, &cfg).unwrap();
    assert!(
        close(r.loss_total, 1.09 * std::f64::consts::LN_2, 1e-6),
        "fixture total {}",
        r.loss_total
    );

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let batch = random_batch(&mut rng);
        let r = pwce_loss(&batch, &cfg).unwrap();
        let mean = r.weights.iter().sum::<f64>() / r.weights.len() as f64;
        assert!((mean - 1.0).abs() < 1e-9, "mean weight {mean}");
        let max_ppl = r.perplexities.iter().cloned().fold(f64::MIN, f64::max);
        assert!(max_ppl <= cfg.beta, "max ppl {max_ppl}");
        let plain = pwce_loss(&batch, &PwceConfig { lambda: 0.0, ..cfg }).unwrap();
        assert_eq!(
            plain.loss_total.to_bits(),
            masked_cross_entropy(&batch).to_bits(),
            "lambda = 0"
        );
    }

    let h = 1e-6;
    for case in 0..100 {
        let batch = random_batch(&mut rng);
        let cfg = PwceConfig {
            beta: if case % 2 == 0 { 1.5 } else { 1e6 },
            detach_weights: false,
            ..PwceConfig::default()
        };
        let g = pwce_gradient(&batch, &cfg).unwrap();
        let mut num = vec![0.0; g.len()];
        for (i, n) in num.iter_mut().enumerate() {
            let (mut p, mut m) = (batch.clone(), batch.clone());
            p.logits_mut()[i] += h;
            m.logits_mut()[i] -= h;
            *n = (pwce_loss(&p, &cfg).unwrap().loss_total - pwce_loss(&m, &cfg).unwrap().loss_total) / (2.0 * h);
        }
        let diff = g.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = num.iter().map(|b| b * b).sum::<f64>().sqrt().max(1e-12);
        assert!(
            diff / scale < 1e-3,
            "gradient case {case}: relative error {}",
            diff / scale
        );
    }
}

// ---------------------------------------------------------------------------
// 2. Rewards
// ---------------------------------------------------------------------------

fn criterion_rewards() {
    let pred = "pyautogui.write(message='$50')";
    let b = score(
        TaskTag::Agent,
        pred,
        &TruthPayload::Action(pred.into()),
        (1920, 1080),
        &RewardConfig::default(),
    )
    .unwrap();
    assert_eq!(b.r_agent, 2.0);

    let cfg = RewardConfig {
        phi: 0.3,
        l_max: 120.0,
        ..RewardConfig::default()
    };
    let p = length_penalty(&vec!["w"; 120].join(" "), &cfg);
    assert!(close(p, -0.3, 1e-12), "penalty {p}");

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let screen = (rng.gen_range(200..3000i64), rng.gen_range(200..3000i64));
        let t = (rng.gen_range(0.0..screen.0 as f64), rng.gen_range(0.0..screen.1 as f64));
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let mut d = [rng.gen_range(0.0..1000.0), rng.gen_range(0.0..1000.0)];
        d.sort_by(f64::total_cmp);
        let at = |k: f64| (t.0 + angle.cos() * k, t.1 + angle.sin() * k);
        let truth = GroundTruth::point(t.0, t.1);
        let near = reward_grounding(at(d[0]), &truth, screen, 0.1).unwrap();
        let far = reward_grounding(at(d[1]), &truth, screen, 0.1).unwrap();
        assert!(near >= far, "grounding reward increased with distance");
    }

    for _ in 0..1000 {
        let r: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..2.0)).collect();
        let adv = group_advantage(&r).unwrap();
        let mean = adv.iter().sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-9, "advantage mean {mean}");
    }
}

// ---------------------------------------------------------------------------
// 3. Action DSL
// ---------------------------------------------------------------------------

fn random_text(rng: &mut ChaCha8Rng) -> String {
    const EXTRA: &[char] = &['\'', '"', '\\', '\n', '\t', ',', ')', '(', '=', '$', 'é', '漢', '🙂'];
    (0..rng.gen_range(0..20))
        .map(|_| {
            if rng.gen_bool(0.3) {
                EXTRA[rng.gen_range(0..EXTRA.len())]
            } else {
                rng.gen_range(' '..='~')
            }
        })
        .collect()
}

fn random_keys(rng: &mut ChaCha8Rng, min: usize) -> Vec<String> {
    const KEYS: &[&str] = &["ctrl", "shift", "alt", "c", "v", "enter", "tab", "f5", "'", ","];
    (0..rng.gen_range(min..min + 3))
        .map(|_| KEYS[rng.gen_range(0..KEYS.len())].to_string())
        .collect()
}

fn random_action(kind: ActionKind, platform: Platform, rng: &mut ChaCha8Rng) -> AtomicAction {
    let mut c = || rng.gen_range(0..5000u32);
    match kind {
        ActionKind::Click => AtomicAction::Click { x: c(), y: c() },
        ActionKind::DoubleClick => AtomicAction::DoubleClick { x: c(), y: c() },
        ActionKind::RightClick => AtomicAction::RightClick { x: c(), y: c() },
        ActionKind::MoveTo => AtomicAction::MoveTo { x: c(), y: c() },
        ActionKind::DragTo => AtomicAction::DragTo { x: c(), y: c() },
        ActionKind::LongPress => AtomicAction::LongPress { x: c(), y: c() },
        ActionKind::Swipe => AtomicAction::Swipe {
            begin: (c(), c()),
            end: (c(), c()),
        },
        ActionKind::Press if platform == Platform::Mobile => AtomicAction::Press {
            keys: vec!["enter".into()],
        },
        ActionKind::Press => AtomicAction::Press {
            keys: random_keys(rng, 1),
        },
        ActionKind::Hotkey => AtomicAction::Hotkey {
            keys: random_keys(rng, 2),
        },
        ActionKind::Write => AtomicAction::Write {
            message: random_text(rng),
        },
        ActionKind::OpenApp => AtomicAction::OpenApp { name: random_text(rng) },
        ActionKind::Answer => AtomicAction::Answer {
            message: random_text(rng),
        },
        ActionKind::Scroll => AtomicAction::Scroll {
            direction: ScrollDirection::ALL[rng.gen_range(0..4)],
        },
        ActionKind::Terminate => AtomicAction::Terminate {
            status: if rng.gen_bool(0.5) {
                TerminateStatus::Success
            } else {
                TerminateStatus::Failure
            },
        },
        ActionKind::Wait => AtomicAction::Wait,
        ActionKind::Home => AtomicAction::Home,
        ActionKind::Back => AtomicAction::Back,
    }
}

fn criterion_action_dsl() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows = ActionSpace::table_rows();
    assert_eq!(rows.len(), 22);
    for &(platform, kind) in &rows {
        let space = ActionSpace::for_platform(platform);
        for _ in 0..200 {
            let a = random_action(kind, platform, &mut rng);
            let text = render_action(&a);
            assert_eq!(space.parse(&text).as_ref(), Ok(&a), "roundtrip of {text}");
        }
    }

    let desktop = [
        "click",
        "doubleClick",
        "rightClick",
        "moveTo",
        "dragTo",
        "press",
        "hotkey",
        "write",
        "scroll",
        "wait",
        "terminate",
    ];
    let mobile = [
        "click",
        "long_press",
        "press",
        "swipe",
        "wait",
        "terminate",
        "write",
        "open_app",
        "answer",
        "home",
        "back",
    ];
    let all: Vec<ActionKind> = rows.iter().map(|r| r.1).collect();
    for (platform, table) in [(Platform::Desktop, desktop), (Platform::Mobile, mobile)] {
        let space = ActionSpace::for_platform(platform);
        for &kind in &all {
            let a = random_action(kind, Platform::Mobile, &mut rng);
            let flagged = validate_action(&a, &space, (u32::MAX, u32::MAX))
                .iter()
                .any(|v| matches!(v, Violation::NotInSpace { .. }));
            assert_eq!(!flagged, table.contains(&kind.function_name()), "{platform:?} {kind:?}");
        }
    }

    let alphabet: Vec<char> = "pyautogui.mobile.click(x=1, y=2)[]'\"\\=,writepress_ \n"
        .chars()
        .collect();
    for _ in 0..100_000 {
        let s: String = if rng.gen_bool(0.5) {
            (0..rng.gen_range(0..48))
                .map(|_| alphabet[rng.gen_range(0..alphabet.len())])
                .collect()
        } else {
            (0..rng.gen_range(0..48)).map(|_| rng.gen::<char>()).collect()
        };
        if let Ok(a) = parse_action(&s) {
            assert_eq!(parse_action(&render_action(&a)), Ok(a));
        }
    }
}

// ---------------------------------------------------------------------------
// 4. ILG
// ---------------------------------------------------------------------------

fn noise(rng: &mut ChaCha8Rng, w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |_, _| image::Rgb([rng.gen(), rng.gen(), rng.gen()]))
}

fn criterion_ilg() {
    let cfg = IlgConfig::default();
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let (w, h) = (rng.gen_range(20..150), rng.gen_range(20..150));
        let point = (rng.gen_range(0..w), rng.gen_range(0..h));
        let image = noise(&mut rng, w, h);
        let meta = GroundingMeta::new(image, point, "target").unwrap();
        let (bw, bh) = (rng.gen_range(10..120), rng.gen_range(10..120));
        let bg = noise(&mut rng, bw, bh);
        let distractors: Vec<RgbImage> = (0..3)
            .map(|_| {
                let (dw, dh) = (rng.gen_range(20..150), rng.gen_range(20..150));
                noise(&mut rng, dw, dh)
            })
            .collect();
        let s = synthesize(&meta, &bg, &distractors, seed, &cfg).unwrap();
        let target = s.provenance.target;
        let rect = target.rect();
        assert!(rect.contains(s.point), "seed {seed}: point outside target");

        let (pw, ph) = target.placed_size;
        for dy in 0..ph {
            for dx in 0..pw {
                let expected = meta.image.get_pixel(dx * w / pw, dy * h / ph);
                assert_eq!(
                    s.composite.get_pixel(rect.x + dx, rect.y + dy),
                    expected,
                    "seed {seed}: crop pixel"
                );
            }
        }
        if pw >= w && ph >= h {
            for sy in 0..h {
                for sx in 0..w {
                    let (dx, dy) = ((sx * pw).div_ceil(w), (sy * ph).div_ceil(h));
                    assert_eq!(
                        s.composite.get_pixel(rect.x + dx, rect.y + dy),
                        meta.image.get_pixel(sx, sy)
                    );
                }
            }
        }
        for d in &s.provenance.distractors {
            if let DistractorOutcome::Placed { placement, .. } = d {
                assert!(
                    !placement.rect().intersects(&rect),
                    "seed {seed}: distractor overlaps target"
                );
            }
        }
        let rebuilt = reconstruct(&meta, &bg, &distractors, &s.provenance);
        assert!(
            rebuilt.as_raw() == s.composite.as_raw(),
            "seed {seed}: reconstruction differs"
        );
        if seed == 7 {
            let again = synthesize(&meta, &bg, &distractors, 7, &cfg).unwrap();
            assert!(again.composite.as_raw() == s.composite.as_raw() && again.provenance == s.provenance);
        }
    }
}

// ---------------------------------------------------------------------------
// 5. Orchestration
// ---------------------------------------------------------------------------

fn scripted(path: &Path) -> ScriptedModel {
    ScriptedModel::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn prompt_text(call: &guiagent_core::runtime::RecordedCall) -> String {
    call.messages.iter().map(|m| m.text()).collect::<Vec<_>>().join("\n")
}

fn numbered_history(prompt: &str) -> usize {
    let body = prompt.split("Action history").nth(1).unwrap();
    let body = body.split("The note you have taken so far:").next().unwrap();
    body.lines()
        .filter(|l| l.split_once(". ").is_some_and(|(n, _)| n.parse::<u32>().is_ok()))
        .count()
}

fn criterion_orchestration() {
    let fx = core_tests().join("fixtures/orchestration");
    let golden = core_tests().join("golden");

    // (a) role order
    let model = RecordingClient::new(scripted(&fx.join("mas/model.json")));
    let mut env = MockEnv::from_file(&fx.join("mas/env.json")).unwrap();
    let ep = run_mas(
        "Search the store for a kettle",
        &mut env,
        &model,
        &EpisodeConfig::default(),
    );
    let cycle = [Role::Observer, Role::Planner, Role::Allocator, Role::Executor];
    assert_eq!(ep.role_log(), cycle.repeat(ep.steps.len()), "MAS role log");

    // (b) history window and cumulative notes over 13 planner turns
    let planner_replies: Vec<String> = (1..=12)
        .map(|i| format!("Thought: t{i}\n<note>n{i}</note>\n<action>Swipe up.</action>"))
        .chain(std::iter::once(
            "Thought: end\n<note></note>\n<action>Terminate the current task.</action>".to_string(),
        ))
        .collect();
    let exec_replies: Vec<String> = (0..12)
        .map(|_| {
            "<action>Swipe</action><tool_call>mobile.swipe(begin=[500,1500], end=[500,500])</tool_call>".to_string()
        })
        .chain(std::iter::once(
            "<action>Stop</action><tool_call>pyautogui.terminate(status='success')</tool_call>".to_string(),
        ))
        .collect();
    let planner = RecordingClient::new(ScriptedModel::new().with_replies(Role::ExternalPlanner, planner_replies));
    let executor = ScriptedModel::new().with_replies(Role::Executor, exec_replies);
    let script = serde_json::json!({
        "platform": "mobile", "screen": [1080, 2400], "initial": "s0.png", "error_screen": "err.png",
        "rows": (1..=12).map(|i| serde_json::json!({"expect": "any", "next": format!("s{i}.png")})).collect::<Vec<_>>(),
    });
    let mut env = MockEnv::new(serde_json::from_value(script).unwrap(), "/").unwrap();
    let cfg = EpisodeConfig {
        t_max: 20,
        ..EpisodeConfig::default()
    };
    let ep = run_policy_executor(
        "scroll",
        &mut env,
        &planner,
        &executor,
        &RoleConfig::new(Role::ExternalPlanner),
        &cfg,
    );
    assert_eq!(ep.outcome, Outcome::Success);
    let calls = planner.calls();
    assert_eq!(calls.len(), 13);
    for (i, c) in calls.iter().enumerate() {
        let text = prompt_text(c);
        assert!(
            numbered_history(&text) <= 10,
            "planner call {} shows too much history",
            i + 1
        );
        let notes: Vec<&str> = text.lines().filter(|l| l.starts_with("- n")).collect();
        let expected: Vec<String> = (1..=i).map(|k| format!("- n{k}")).collect();
        assert_eq!(notes, expected, "notes shown to planner call {}", i + 1);
    }
    assert_eq!(numbered_history(&prompt_text(&calls[12])), 10);

    // (c) golden transcripts through the CLI
    let dir = tempfile::tempdir().unwrap();
    let mock = |p: &Path| format!("mock:{}", p.display());
    let cases: [(&str, &str, Vec<String>); 3] = [
        (
            "end2end",
            "Open the search box",
            vec!["--endpoint".into(), mock(&fx.join("end2end/model.json"))],
        ),
        (
            "mas",
            "Search the store for a kettle",
            vec!["--endpoint".into(), mock(&fx.join("mas/model.json"))],
        ),
        (
            "policy_executor",
            "What is the price of the blue kettle?",
            vec![
                "--endpoint".into(),
                mock(&fx.join("policy_executor/executor.json")),
                "--planner-endpoint".into(),
                mock(&fx.join("policy_executor/planner.json")),
                "--planner-prompt".into(),
                "androidworld".into(),
            ],
        ),
    ];
    for (name, goal, extra) in cases {
        let out = dir.path().join(format!("{name}.jsonl"));
        let mode = name.replace('_', "-");
        let env_spec = mock(&fx.join(format!("{name}/env.json")));
        let mut args: Vec<&str> = vec![
            "run",
            "--mode",
            &mode,
            "--goal",
            goal,
            "--env",
            &env_spec,
            "--out",
            out.to_str().unwrap(),
        ];
        args.extend(extra.iter().map(String::as_str));
        let o = guiagent(&args);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{name}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        let produced = std::fs::read_to_string(&out).unwrap();
        let frozen = std::fs::read_to_string(golden.join(format!("{name}.jsonl"))).unwrap();
        assert!(produced == frozen, "{name}: trajectory differs from the golden file");
        let steps = produced.lines().filter(|l| l.starts_with("{\"type\":\"step\"")).count();
        assert!(steps <= 15, "{name}: exceeded t_max");
    }
}

// ---------------------------------------------------------------------------
// 6. Structured output
// ---------------------------------------------------------------------------

fn from_marker(t: Template, marker: &str) -> &'static str {
    let text = t.text();
    &text[text
        .find(marker)
        .unwrap_or_else(|| panic!("{marker} not in {}", t.id()))..]
}

fn criterion_structured() {
    parse_decision(from_marker(Template::E2e, "<think>")).unwrap();
    parse_decision(from_marker(Template::MasExecutor, "<action>")).unwrap();
    assert!(
        extract_tagged("action", from_marker(Template::MasAllocator, "<action>"))
            .unwrap()
            .is_some()
    );
    parse_screen2word(from_marker(Template::Su, "<screen2word>")).unwrap();
    parse_plan_json(from_marker(Template::MasPlanner, "{\"Planning\"")).unwrap();
    parse_plan_json(from_marker(Template::Gp, "{\"Goal\": \"Go to")).unwrap();
    let gp_input = SynthesisInput {
        goal: Some("g".into()),
        ..SynthesisInput::default()
    };
    validate_output(
        SynthesisTask::Gp,
        from_marker(Template::Gp, "{\"Goal\": \"**Goal"),
        &gp_input,
    )
    .unwrap();
    validate_output(
        SynthesisTask::Lcc,
        from_marker(Template::Lcc, "**Thought**:"),
        &SynthesisInput::default(),
    )
    .unwrap();
    let ata = parse_lenient_object(from_marker(Template::Ata, "{ \"tool_call\"")).unwrap();
    assert!(ata.contains_key("tool_call") && ata.contains_key("semantic_description"));
    parse_action("pyautogui.click(x=268, y=439)").unwrap();
    let grounding = from_marker(Template::Grounding, "{\"point_2d\"");
    assert!(parse_grounding_json(grounding).is_err(), "literal x, y is not a point");
    parse_grounding_json(&grounding.replace("[x, y]", "[10, 20]")).unwrap();
    for t in [
        Template::PlannerAndroidWorld,
        Template::PlannerAndroidWorldGpt5,
        Template::PlannerMiniwob,
        Template::PlannerOsworld,
    ] {
        let ex = from_marker(t, "Thought:");
        let end = ex.find("</action>").unwrap() + "</action>".len();
        parse_planner_turn(&ex[..end]).unwrap();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..1000 {
        let desc: String = (0..rng.gen_range(1..20)).map(|_| rng.gen_range('a'..='z')).collect();
        let a = format!("<think>x</think><action>{desc}</action><tool_call>pyautogui.wait()</tool_call>");
        let b = format!("<think>x</think><answer>{desc}</answer><tool_call>pyautogui.wait()</tool_call>");
        assert_eq!(parse_decision(&a), parse_decision(&b));
    }

    const PIECES: &[&str] = &[
        "<think>",
        "</think>",
        "<action>",
        "</action>",
        "<answer>",
        "<tool_call>",
        "</tool_call>",
        "<note>",
        "</note>",
        "{",
        "}",
        "\"",
        "\"point_2d\":",
        "\"Planning\":",
        "[",
        "]",
        ",",
        "7",
        "-1",
        "pyautogui.click(x=1, y=2)",
        "\n",
    ];
    for _ in 0..100_000 {
        let s: String = if rng.gen_bool(0.7) {
            (0..rng.gen_range(0..12))
                .map(|_| PIECES[rng.gen_range(0..PIECES.len())])
                .collect()
        } else {
            (0..rng.gen_range(0..40)).map(|_| rng.gen::<char>()).collect()
        };
        let _ = parse_decision(&s);
        let _ = parse_planner_turn(&s);
        let _ = parse_plan_json(&s);
        let _ = parse_grounding_json(&s);
        let _ = parse_screen2word(&s);
    }
}

// ---------------------------------------------------------------------------
// 7. CLI smoke
// ---------------------------------------------------------------------------

fn criterion_cli() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("search.jsonl");
    let o = guiagent(&[
        "run",
        "--mode",
        "end2end",
        "--goal",
        "Find kettles under $50",
        "--env",
        &format!("mock:{}", cli_fixture("search/env.json").display()),
        "--endpoint",
        &format!("mock:{}", cli_fixture("search/model.json").display()),
        "--out",
        traj.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "run: {}", String::from_utf8_lossy(&o.stderr));
    let o = guiagent(&[
        "score",
        "--traj",
        traj.to_str().unwrap(),
        "--labels",
        cli_fixture("search/labels.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "score: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    let totals = &report["totals"];

    // Worked by hand for the three scripted replies on a 1000x800 screen with
    // phi = 0.3, L_max = 120, gamma = 0.1:
    //   step 1: click (120,40) against (130,40), distance 10, diagonal
    //           sqrt(1000^2 + 800^2) = 1280.6248474865697, so
    //           r_val = 1 - 10 / 128.06248474865697 = 0.921913119055697,
    //           11 whitespace tokens, penalty -0.3 * 11 / 120 = -0.0275
    //   step 2: identical write, r_agent = 2, 5 tokens, penalty -0.0125
    //   step 3: identical terminate, r_agent = 2, 1 token, penalty -0.0025
    let r_agent = 1.921913119055697 + 2.0 + 2.0;
    let r_penalty = -0.0275 - 0.0125 - 0.0025;
    assert_eq!(totals["count"], 3);
    assert!(
        close(totals["r_agent"].as_f64().unwrap(), r_agent, 1e-9),
        "r_agent {}",
        totals["r_agent"]
    );
    assert!(
        close(totals["r_penalty"].as_f64().unwrap(), r_penalty, 1e-12),
        "r_penalty {}",
        totals["r_penalty"]
    );
    assert!(
        close(totals["total"].as_f64().unwrap(), r_agent + r_penalty, 1e-9),
        "total {}",
        totals["total"]
    );
}

// ---------------------------------------------------------------------------

#[test]
fn acceptance() {
    let criteria: [(&str, u64, fn()); 7] = [
        ("pwce exactness", 10, criterion_pwce),
        ("reward suite", 10, criterion_rewards),
        ("action dsl", 60, criterion_action_dsl),
        ("ilg fidelity", 120, criterion_ilg),
        ("orchestration golden transcripts", 30, criterion_orchestration),
        ("structured-output robustness", 60, criterion_structured),
        ("cli smoke", 20, criterion_cli),
    ];
    let mut failed = Vec::new();
    for (i, (name, limit, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check));
        let elapsed = start.elapsed();
        let within = elapsed <= Duration::from_secs(limit);
        let verdict = match (&result, within) {
            (Ok(()), true) => "PASS".to_string(),
            (Ok(()), false) => format!("FAIL (over the {limit}s limit)"),
            (Err(e), _) => {
                let msg = e
                    .downcast_ref::<String>()
                    .map(String::as_str)
                    .or_else(|| e.downcast_ref::<&str>().copied())
                    .unwrap_or("panic");
                format!("FAIL ({})", msg.lines().next().unwrap_or(""))
            }
        };
        println!(
            "criterion {} [{name}]: {verdict} in {:.2}s (limit {limit}s)",
            i + 1,
            elapsed.as_secs_f64()
        );
        if !verdict.starts_with("PASS") {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
