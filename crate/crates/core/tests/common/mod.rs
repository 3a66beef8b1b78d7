#![allow(dead_code)]

use std::path::{Path, PathBuf};

use guiagent_core::orchestrator::{run_end2end, run_mas, run_policy_executor, Episode, EpisodeConfig};
use guiagent_core::runtime::{MockEnv, ModelClient, Role, RoleConfig, ScriptedModel};
use guiagent_core::synthesis::Template;
use serde::Deserialize;

pub fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

/// Compares `actual` with a frozen golden file. With `UPDATE_GOLDEN=1` the
/// file is rewritten instead.
pub fn check_golden(name: &str, actual: &str) {
    let path = golden_path(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("{}: {e} (run with UPDATE_GOLDEN=1 to create it)", path.display()));
    assert!(
        expected == actual,
        "{} differs from the frozen copy:\n{actual}",
        path.display()
    );
}

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(rel)
}

/// `scenario.json` inside an orchestration fixture directory.
#[derive(Debug, Deserialize)]
pub struct Scenario {
    pub goal: String,
    pub mode: String,
    pub env: String,
    pub model: String,
    #[serde(default)]
    pub planner: Option<String>,
    #[serde(default)]
    pub planner_prompt: Option<String>,
}

pub fn load_model(path: &Path) -> ScriptedModel {
    ScriptedModel::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
}

pub fn load_scenario(name: &str) -> (PathBuf, Scenario) {
    let dir = fixture(&format!("orchestration/{name}"));
    let text = std::fs::read_to_string(dir.join("scenario.json")).unwrap();
    (dir, serde_json::from_str(&text).unwrap())
}

/// Runs a fixture scenario with the given clients standing in for the
/// scripted ones when provided.
pub fn run_scenario_with(
    name: &str,
    model: &dyn ModelClient,
    planner: Option<&dyn ModelClient>,
    cfg: &EpisodeConfig,
) -> Episode {
    let (dir, sc) = load_scenario(name);
    let mut env = MockEnv::from_file(&dir.join(&sc.env)).unwrap();
    match sc.mode.as_str() {
        "end2end" => run_end2end(&sc.goal, &mut env, model, cfg),
        "mas" => run_mas(&sc.goal, &mut env, model, cfg),
        "policy_executor" => {
            let id = format!("planner_{}", sc.planner_prompt.as_deref().unwrap_or("androidworld"));
            let role = RoleConfig::new(Role::ExternalPlanner).with_instruction(Template::from_id(&id).unwrap());
            run_policy_executor(&sc.goal, &mut env, planner.expect("planner client"), model, &role, cfg)
        }
        other => panic!("unknown mode {other}"),
    }
}

pub fn run_scenario(name: &str) -> Episode {
    let (dir, sc) = load_scenario(name);
    let model = load_model(&dir.join(&sc.model));
    let planner = sc.planner.as_ref().map(|p| load_model(&dir.join(p)));
    run_scenario_with(
        name,
        &model,
        planner.as_ref().map(|p| p as &dyn ModelClient),
        &EpisodeConfig::default(),
    )
}
