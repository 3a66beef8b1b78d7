use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use guiagent_core::orchestrator::{run_end2end, run_mas, run_policy_executor, Episode, Outcome};
use guiagent_core::runtime::{MockEnv, Role, RoleConfig};
use guiagent_core::synthesis::Template;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{read_jsonl, to_json, write_text, Config};
use crate::{CliError, CliResult, ModeArg, PlannerPrompt, RunArgs};

#[derive(Debug, Clone, Deserialize)]
struct BatchEntry {
    goal: String,
    env: String,
    out: PathBuf,
}

#[derive(Debug, Serialize)]
struct Summary {
    out: PathBuf,
    outcome: Outcome,
    steps: usize,
}

/// Wall-clock details kept out of the trajectory so trajectories stay
/// byte-reproducible.
#[derive(Debug, Serialize)]
struct Sidecar<'a> {
    seed: u64,
    goal: &'a str,
    started_unix_ms: u128,
    finished_unix_ms: u128,
    tool_version: &'static str,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

pub fn exit_code(outcome: &Outcome) -> u8 {
    match outcome {
        Outcome::Success | Outcome::Answer { .. } => 0,
        Outcome::Failed | Outcome::EnvDone => 1,
        Outcome::MaxSteps => 2,
        Outcome::ModelError { .. } | Outcome::EnvError { .. } => 3,
    }
}

fn open_env(spec: &str) -> CliResult<MockEnv> {
    let path = spec
        .strip_prefix("mock:")
        .ok_or_else(|| CliError::Usage(format!("unsupported environment `{spec}`; only mock:PATH is available")))?;
    MockEnv::from_file(Path::new(path)).map_err(|e| CliError::Usage(e.to_string()))
}

fn planner_template(p: PlannerPrompt) -> Template {
    match p {
        PlannerPrompt::Androidworld => Template::PlannerAndroidWorld,
        PlannerPrompt::Miniwob => Template::PlannerMiniwob,
        PlannerPrompt::Osworld => Template::PlannerOsworld,
        PlannerPrompt::AndroidworldGpt5 => Template::PlannerAndroidWorldGpt5,
    }
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    out.with_file_name(name)
}

pub fn execute(args: &RunArgs, cfg: &Config) -> CliResult<u8> {
    let mut episode_cfg = cfg.episode.clone();
    if let Some(t) = args.t_max {
        episode_cfg.t_max = t;
    }
    episode_cfg.validate().map_err(CliError::Usage)?;
    let endpoint = args
        .endpoint
        .as_deref()
        .ok_or_else(|| CliError::Usage("--endpoint is required".into()))?;
    let planner_endpoint = match (args.mode, args.planner_endpoint.as_deref()) {
        (ModeArg::PolicyExecutor, None) => {
            return Err(CliError::Usage("policy-executor mode needs --planner-endpoint".into()));
        }
        (_, p) => p,
    };
    if args.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let entries = match &args.batch {
        Some(path) => read_jsonl::<BatchEntry>(path)?,
        None => vec![BatchEntry {
            goal: args.goal.clone().unwrap_or_default(),
            env: args.env.clone().unwrap_or_default(),
            out: args.out.clone().unwrap_or_default(),
        }],
    };
    let planner_role = RoleConfig::new(Role::ExternalPlanner).with_instruction(planner_template(args.planner_prompt));

    let run_one = |entry: &BatchEntry| -> CliResult<Summary> {
        let started = now_ms();
        let mut env = open_env(&entry.env)?;
        let client = cfg.client(endpoint)?;
        let episode: Episode = match args.mode {
            ModeArg::End2end => run_end2end(&entry.goal, &mut env, &*client, &episode_cfg),
            ModeArg::Mas => run_mas(&entry.goal, &mut env, &*client, &episode_cfg),
            ModeArg::PolicyExecutor => {
                let planner = cfg.client(planner_endpoint.expect("checked above"))?;
                run_policy_executor(&entry.goal, &mut env, &*planner, &*client, &planner_role, &episode_cfg)
            }
        };
        write_text(&entry.out, &episode.to_jsonl())?;
        let sidecar = Sidecar {
            seed: args.seed,
            goal: &entry.goal,
            started_unix_ms: started,
            finished_unix_ms: now_ms(),
            tool_version: env!("CARGO_PKG_VERSION"),
        };
        write_text(&sidecar_path(&entry.out), &to_json(&sidecar))?;
        log::info!(
            "{}: {:?} after {} steps",
            entry.out.display(),
            episode.outcome,
            episode.steps.len()
        );
        Ok(Summary {
            out: entry.out.clone(),
            outcome: episode.outcome,
            steps: episode.steps.len(),
        })
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let results: Vec<CliResult<Summary>> = pool.install(|| entries.par_iter().map(run_one).collect());
    let summaries = results.into_iter().collect::<CliResult<Vec<_>>>()?;
    let code = summaries.iter().map(|s| exit_code(&s.outcome)).max().unwrap_or(0);
    if args.batch.is_some() {
        println!("{}", to_json(&summaries));
    } else {
        println!("{}", to_json(&summaries[0]));
    }
    Ok(code)
}
