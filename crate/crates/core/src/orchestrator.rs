//! Episode loops for the three inference modes.
//!
//! All modes share one driver: reset the environment, ask a [`Policy`] for
//! the next actions, execute them in order, and stop on a terminal action,
//! an environment `done`, an error, or the step budget. The policies differ
//! only in which roles they consult and how they prompt them.
//!
//! Failure handling:
//! - an unparsable role reply is re-asked `role_retries` times; if it still
//!   fails, the step is recorded with an error and a `wait` is executed;
//! - `max_consecutive_failures` such steps in a row end the episode with
//!   `model_error`;
//! - transport errors and environment errors end the episode immediately.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::action::{validate_action, ActionKind, ActionSpace, AtomicAction, TerminateStatus};
use crate::runtime::{EnvObservation, Environment, Message, ModelClient, ModelError, Part, Role, RoleConfig};
use crate::structured::{
    extract_tagged, parse_decision, parse_plan_json, parse_planner_turn, parse_screen2word, PlanOutput,
};
use crate::synthesis::Template;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Mode {
    #[serde(rename = "end2end")]
    End2End,
    Mas,
    PolicyExecutor {
        planner: RoleConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub t_max: u32,
    pub history_window: usize,
    pub screenshot_window: usize,
    /// Reuse the first MAS plan instead of re-planning every step.
    pub cache_plan: bool,
    pub role_retries: u32,
    pub max_consecutive_failures: u32,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            t_max: 15,
            history_window: 10,
            screenshot_window: 3,
            cache_plan: false,
            role_retries: 1,
            max_consecutive_failures: 3,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.t_max == 0 {
            return Err("t_max must be at least 1".into());
        }
        if self.history_window == 0 || self.screenshot_window == 0 {
            return Err("history and screenshot windows must be at least 1".into());
        }
        if self.max_consecutive_failures == 0 {
            return Err("max_consecutive_failures must be at least 1".into());
        }
        Ok(())
    }
}

/// One role invocation within a step. Replies rejected by the parser are
/// kept in `failed_attempts`, oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleCall {
    pub role: Role,
    pub output: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failed_attempts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u32,
    pub observation: String,
    pub screen: (u32, u32),
    pub role_calls: Vec<RoleCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screen_description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tips: Option<String>,
    /// The natural-language action for this step.
    pub action_text: String,
    pub tool_calls: Vec<String>,
    pub executed: Vec<AtomicAction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env_note: Option<String>,
}

impl StepRecord {
    fn new(t: u32, obs: &EnvObservation) -> Self {
        Self {
            t,
            observation: obs.screenshot.clone(),
            screen: (obs.width, obs.height),
            role_calls: Vec::new(),
            screen_description: None,
            plan: None,
            tips: None,
            action_text: String::new(),
            tool_calls: Vec::new(),
            executed: Vec::new(),
            note: None,
            error: None,
            env_note: None,
        }
    }

    /// Raw output of the last call made by `role` in this step.
    pub fn output_of(&self, role: Role) -> Option<&str> {
        self.role_calls
            .iter()
            .rev()
            .find(|c| c.role == role)
            .map(|c| c.output.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Success,
    /// `terminate(status='failure')`.
    Failed,
    Answer {
        text: String,
    },
    MaxSteps,
    ModelError {
        detail: String,
    },
    EnvError {
        detail: String,
    },
    /// The environment ended the episode without a terminal action.
    EnvDone,
}

impl Outcome {
    fn for_terminal(a: &AtomicAction) -> Option<Self> {
        match a {
            AtomicAction::Terminate {
                status: TerminateStatus::Success,
            } => Some(Outcome::Success),
            AtomicAction::Terminate {
                status: TerminateStatus::Failure,
            } => Some(Outcome::Failed),
            AtomicAction::Answer { message } => Some(Outcome::Answer { text: message.clone() }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub goal: String,
    pub mode: Mode,
    pub config: EpisodeConfig,
    pub action_space: ActionSpace,
    pub steps: Vec<StepRecord>,
    pub outcome: Outcome,
    pub notes: Vec<String>,
}

/// One line of a trajectory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TrajectoryLine {
    Header {
        goal: String,
        #[serde(flatten)]
        mode: Mode,
        config: EpisodeConfig,
        action_space: ActionSpace,
    },
    Step(StepRecord),
    Outcome {
        outcome: Outcome,
        notes: Vec<String>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum TrajectoryError {
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("trajectory has no header line")]
    NoHeader,
    #[error("trajectory has no outcome line")]
    NoOutcome,
    #[error("line {0}: unexpected {1} line")]
    Unexpected(usize, &'static str),
}

impl Episode {
    /// Header, one line per step, then the outcome; newline-terminated.
    pub fn to_jsonl(&self) -> String {
        let mut lines = vec![TrajectoryLine::Header {
            goal: self.goal.clone(),
            mode: self.mode.clone(),
            config: self.config.clone(),
            action_space: self.action_space.clone(),
        }];
        lines.extend(self.steps.iter().cloned().map(TrajectoryLine::Step));
        lines.push(TrajectoryLine::Outcome {
            outcome: self.outcome.clone(),
            notes: self.notes.clone(),
        });
        lines
            .iter()
            .map(|l| serde_json::to_string(l).expect("trajectory lines serialize") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TrajectoryError> {
        let mut header = None;
        let mut steps = Vec::new();
        let mut end = None;
        for (i, raw) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let line: TrajectoryLine =
                serde_json::from_str(raw).map_err(|source| TrajectoryError::Json { line: i + 1, source })?;
            match line {
                TrajectoryLine::Header { .. } if header.is_some() => {
                    return Err(TrajectoryError::Unexpected(i + 1, "header"))
                }
                TrajectoryLine::Header {
                    goal,
                    mode,
                    config,
                    action_space,
                } => header = Some((goal, mode, config, action_space)),
                _ if header.is_none() => return Err(TrajectoryError::NoHeader),
                _ if end.is_some() => return Err(TrajectoryError::Unexpected(i + 1, "trailing")),
                TrajectoryLine::Step(s) => steps.push(s),
                TrajectoryLine::Outcome { outcome, notes } => end = Some((outcome, notes)),
            }
        }
        let (goal, mode, config, action_space) = header.ok_or(TrajectoryError::NoHeader)?;
        let (outcome, notes) = end.ok_or(TrajectoryError::NoOutcome)?;
        Ok(Episode {
            goal,
            mode,
            config,
            action_space,
            steps,
            outcome,
            notes,
        })
    }

    /// Roles in call order across all steps.
    pub fn role_log(&self) -> Vec<Role> {
        self.steps
            .iter()
            .flat_map(|s| s.role_calls.iter().map(|c| c.role))
            .collect()
    }
}

/// Numbered lines for the last `window` steps:
/// `t. <what was executed> | <action sentence>`.
pub fn render_history(steps: &[StepRecord], window: usize) -> String {
    if steps.is_empty() {
        return "(no actions yet)".into();
    }
    let start = steps.len().saturating_sub(window);
    steps[start..]
        .iter()
        .map(|s| {
            let summary = if s.executed.is_empty() {
                "no action executed".to_string()
            } else {
                s.executed
                    .iter()
                    .map(AtomicAction::summarize)
                    .collect::<Vec<_>>()
                    .join("; ")
            };
            let sentence = if s.action_text.trim().is_empty() {
                "(no decision)"
            } else {
                s.action_text.trim()
            };
            format!("{}. {summary} | {sentence}", s.t)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_notes(notes: &[String]) -> String {
    if notes.is_empty() {
        return "(no notes yet)".into();
    }
    notes.iter().map(|n| format!("- {n}")).collect::<Vec<_>>().join("\n")
}

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

enum StepError {
    /// The role's reply could not be used, even after retries.
    Unparsable(String),
    Transport(ModelError),
}

struct Ctx<'a> {
    goal: &'a str,
    obs: &'a EnvObservation,
    /// Observations up to and including the current one, oldest first.
    seen: &'a [EnvObservation],
    steps: &'a [StepRecord],
    notes: &'a [String],
    space: &'a ActionSpace,
    cfg: &'a EpisodeConfig,
}

trait Policy {
    fn decide(&mut self, ctx: &Ctx<'_>, step: &mut StepRecord) -> Result<Vec<AtomicAction>, StepError>;
}

fn drive(goal: &str, env: &mut dyn Environment, cfg: &EpisodeConfig, mode: Mode, policy: &mut dyn Policy) -> Episode {
    let space = ActionSpace::for_platform(env.platform());
    let mut episode = Episode {
        goal: goal.to_string(),
        mode,
        config: cfg.clone(),
        action_space: space.clone(),
        steps: Vec::new(),
        outcome: Outcome::MaxSteps,
        notes: Vec::new(),
    };
    let mut obs = match env.reset(goal) {
        Ok(o) => o,
        Err(e) => {
            episode.outcome = Outcome::EnvError { detail: e.to_string() };
            return episode;
        }
    };
    let mut seen = vec![obs.clone()];
    let mut failures = 0;
    for t in 1..=cfg.t_max {
        let mut step = StepRecord::new(t, &obs);
        let ctx = Ctx {
            goal,
            obs: &obs,
            seen: &seen,
            steps: &episode.steps,
            notes: &episode.notes,
            space: &space,
            cfg,
        };
        let actions = match policy.decide(&ctx, &mut step) {
            Ok(actions) => {
                failures = 0;
                actions
            }
            Err(StepError::Transport(e)) => {
                step.error = Some(e.to_string());
                episode.steps.push(step);
                episode.outcome = Outcome::ModelError { detail: e.to_string() };
                return episode;
            }
            Err(StepError::Unparsable(why)) => {
                failures += 1;
                step.error = Some(why.clone());
                if failures >= cfg.max_consecutive_failures {
                    episode.steps.push(step);
                    episode.outcome = Outcome::ModelError {
                        detail: format!("{failures} consecutive unusable decisions; last: {why}"),
                    };
                    return episode;
                }
                vec![AtomicAction::Wait]
            }
        };
        if let Some(note) = step.note.as_ref().filter(|n| !n.trim().is_empty()) {
            episode.notes.push(note.trim().to_string());
        }
        let mut finished = None;
        for action in actions {
            match env.step(&action) {
                Ok(next) => {
                    step.executed.push(action.clone());
                    if next.env_note.is_some() {
                        step.env_note = next.env_note.clone();
                    }
                    let done = next.done;
                    obs = next;
                    if let Some(outcome) = Outcome::for_terminal(&action) {
                        finished = Some(outcome);
                        break;
                    }
                    if done {
                        finished = Some(Outcome::EnvDone);
                        break;
                    }
                }
                Err(e) => {
                    episode.steps.push(step);
                    episode.outcome = Outcome::EnvError { detail: e.to_string() };
                    return episode;
                }
            }
        }
        episode.steps.push(step);
        seen.push(obs.clone());
        if let Some(outcome) = finished {
            episode.outcome = outcome;
            return episode;
        }
    }
    episode.outcome = Outcome::MaxSteps;
    episode
}

/// Asks `client` as `role`, re-asking up to `retries` times when `parse`
/// rejects the reply. Every attempt is logged on `step`.
fn call_role<T>(
    client: &dyn ModelClient,
    role: &RoleConfig,
    messages: &[Message],
    retries: u32,
    step: &mut StepRecord,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<T, StepError> {
    let mut failed = Vec::new();
    let mut last_error = String::new();
    for _ in 0..=retries {
        let reply = match client.complete(role, messages) {
            Ok(c) => c.text,
            Err(e) => {
                step.role_calls.push(RoleCall {
                    role: role.role,
                    output: String::new(),
                    failed_attempts: failed,
                    error: Some(e.to_string()),
                });
                return Err(StepError::Transport(e));
            }
        };
        match parse(&reply) {
            Ok(v) => {
                step.role_calls.push(RoleCall {
                    role: role.role,
                    output: reply,
                    failed_attempts: failed,
                    error: None,
                });
                return Ok(v);
            }
            Err(e) => {
                last_error = e;
                failed.push(reply);
            }
        }
    }
    let output = failed.pop().unwrap_or_default();
    step.role_calls.push(RoleCall {
        role: role.role,
        output,
        failed_attempts: failed,
        error: Some(last_error.clone()),
    });
    Err(StepError::Unparsable(format!("{}: {last_error}", role.role.as_str())))
}

fn prompt(role: &RoleConfig, values: &[(&str, String)], images: &[&EnvObservation]) -> Vec<Message> {
    let template = role.template().unwrap_or(Template::MasExecutor);
    let map = values.iter().map(|(k, v)| (*k, v.clone())).collect();
    let system = template
        .render(&map)
        .unwrap_or_else(|e| panic!("orchestrator supplies every slot of {}: {e}", template.id()));
    let parts = images.iter().map(|o| Part::image(&o.path)).collect();
    vec![Message::system(system), Message::user(parts)]
}

/// Parses a `<tool_call>` block into actions valid for the current screen.
fn parse_calls(calls: &[String], ctx: &Ctx<'_>) -> Result<Vec<AtomicAction>, String> {
    if calls.is_empty() {
        return Err("empty <tool_call> block".into());
    }
    calls
        .iter()
        .map(|c| {
            let a = ctx.space.parse(c).map_err(|e| format!("`{c}`: {e}"))?;
            match validate_action(&a, ctx.space, (ctx.obs.width, ctx.obs.height)).first() {
                Some(v) => Err(format!("`{c}`: {v}")),
                None => Ok(a),
            }
        })
        .collect()
}

/// Action sentence, raw calls and parsed actions of one executor reply.
type ExecutorReply = (String, Vec<String>, Vec<AtomicAction>);

fn executor_parse<'c>(ctx: &'c Ctx<'_>) -> impl Fn(&str) -> Result<ExecutorReply, String> + 'c {
    move |text| {
        let d = parse_decision(text).map_err(|e| e.to_string())?;
        let actions = parse_calls(&d.tool_calls, ctx)?;
        Ok((d.action, d.tool_calls, actions))
    }
}

// ---------------------------------------------------------------------------
// End-to-end
// ---------------------------------------------------------------------------

struct EndToEnd<'a> {
    client: &'a dyn ModelClient,
    role: RoleConfig,
}

impl Policy for EndToEnd<'_> {
    fn decide(&mut self, ctx: &Ctx<'_>, step: &mut StepRecord) -> Result<Vec<AtomicAction>, StepError> {
        let messages = prompt(
            &self.role,
            &[
                ("ACTION_SPACE", ctx.space.describe()),
                ("GOAL", ctx.goal.to_string()),
                ("HISTORY", render_history(ctx.steps, ctx.cfg.history_window)),
            ],
            &[ctx.obs],
        );
        let (sentence, calls, actions) = call_role(
            self.client,
            &self.role,
            &messages,
            ctx.cfg.role_retries,
            step,
            executor_parse(ctx),
        )?;
        step.action_text = sentence;
        step.tool_calls = calls;
        Ok(actions)
    }
}

/// Single-model loop: one structured decision per step.
pub fn run_end2end(goal: &str, env: &mut dyn Environment, client: &dyn ModelClient, cfg: &EpisodeConfig) -> Episode {
    let mut policy = EndToEnd {
        client,
        role: RoleConfig::new(Role::End2End),
    };
    drive(goal, env, cfg, Mode::End2End, &mut policy)
}

// ---------------------------------------------------------------------------
// Multi-agent
// ---------------------------------------------------------------------------

struct MultiAgent<'a> {
    client: &'a dyn ModelClient,
    observer: RoleConfig,
    planner: RoleConfig,
    allocator: RoleConfig,
    executor: RoleConfig,
    cached: Option<PlanOutput>,
}

impl Policy for MultiAgent<'_> {
    fn decide(&mut self, ctx: &Ctx<'_>, step: &mut StepRecord) -> Result<Vec<AtomicAction>, StepError> {
        let retries = ctx.cfg.role_retries;

        let messages = prompt(&self.observer, &[], &[ctx.obs]);
        let description = call_role(self.client, &self.observer, &messages, retries, step, |t| {
            parse_screen2word(t).map_err(|e| e.to_string())
        })?;
        step.screen_description = Some(description.clone());

        let plan = match (&self.cached, ctx.cfg.cache_plan) {
            (Some(plan), true) => plan.clone(),
            _ => {
                let window = ctx
                    .cfg
                    .screenshot_window
                    .min(self.planner.max_history_images as usize)
                    .max(1);
                let recent: Vec<&EnvObservation> = ctx.seen[ctx.seen.len().saturating_sub(window)..].iter().collect();
                let messages = prompt(&self.planner, &[("GOAL", ctx.goal.to_string())], &recent);
                let plan = call_role(self.client, &self.planner, &messages, retries, step, |t| {
                    parse_plan_json(t).map_err(|e| e.to_string())
                })?;
                self.cached = Some(plan.clone());
                plan
            }
        };
        step.plan = Some(plan.planning.clone());
        step.tips = Some(plan.tips.clone());

        let messages = prompt(
            &self.allocator,
            &[
                ("SCREEN_DESCRIPTION", description),
                ("PLAN", plan.planning),
                ("HISTORY", render_history(ctx.steps, ctx.cfg.history_window)),
                ("TIPS", plan.tips),
            ],
            &[ctx.obs],
        );
        let sentence = call_role(
            self.client,
            &self.allocator,
            &messages,
            retries,
            step,
            |t| match extract_tagged("action", t) {
                Ok(Some(a)) if !a.is_empty() => Ok(a.to_string()),
                Ok(_) => Err("missing <action> block".to_string()),
                Err(e) => Err(e.to_string()),
            },
        )?;
        step.action_text = sentence.clone();

        let messages = prompt(
            &self.executor,
            &[("ACTION_SPACE", ctx.space.describe()), ("ACTION", sentence)],
            &[ctx.obs],
        );
        let (_, calls, actions) = call_role(
            self.client,
            &self.executor,
            &messages,
            retries,
            step,
            executor_parse(ctx),
        )?;
        step.tool_calls = calls;
        Ok(actions)
    }
}

/// Observer → Planner → Allocator → Executor on every step, all served by
/// one shared model.
pub fn run_mas(goal: &str, env: &mut dyn Environment, client: &dyn ModelClient, cfg: &EpisodeConfig) -> Episode {
    let mut planner = RoleConfig::new(Role::Planner);
    planner.max_history_images = cfg.screenshot_window.max(1) as u32;
    let mut policy = MultiAgent {
        client,
        observer: RoleConfig::new(Role::Observer),
        planner,
        allocator: RoleConfig::new(Role::Allocator),
        executor: RoleConfig::new(Role::Executor),
        cached: None,
    };
    drive(goal, env, cfg, Mode::Mas, &mut policy)
}

// ---------------------------------------------------------------------------
// Policy executor
// ---------------------------------------------------------------------------

static ANSWER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"(?is)\banswer\s*:\s*(?:'(.*)'|"(.*)"|(.*))$"#).unwrap());
static TERMINATE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)^\W*terminate\b").unwrap());

/// The text of an `Answer: '...'` planner sentence.
pub fn planner_answer(sentence: &str) -> Option<String> {
    let c = ANSWER.captures(sentence.trim())?;
    let text = c.get(1).or(c.get(2)).or(c.get(3))?.as_str().trim();
    (!text.is_empty()).then(|| text.to_string())
}

pub fn planner_terminates(sentence: &str) -> bool {
    TERMINATE.is_match(sentence)
}

struct PlannerExecutor<'a> {
    planner_client: &'a dyn ModelClient,
    executor_client: &'a dyn ModelClient,
    planner: RoleConfig,
    executor: RoleConfig,
}

impl Policy for PlannerExecutor<'_> {
    fn decide(&mut self, ctx: &Ctx<'_>, step: &mut StepRecord) -> Result<Vec<AtomicAction>, StepError> {
        let retries = ctx.cfg.role_retries;
        let system = self.planner.template().unwrap_or(Template::PlannerAndroidWorld).text();
        let turn = Template::PlannerTurn
            .render(
                &[
                    ("HISTORY", render_history(ctx.steps, ctx.cfg.history_window)),
                    ("NOTES", render_notes(ctx.notes)),
                    ("GOAL", ctx.goal.to_string()),
                ]
                .into_iter()
                .collect(),
            )
            .expect("planner turn slots are all supplied");
        let messages = vec![
            Message::system(system),
            Message::user(vec![Part::image(&ctx.obs.path), Part::text(turn)]),
        ];
        let planned = call_role(self.planner_client, &self.planner, &messages, retries, step, |t| {
            parse_planner_turn(t).map_err(|e| e.to_string())
        })?;
        step.action_text = planned.action.clone();
        step.note = Some(planned.note.clone()).filter(|n| !n.trim().is_empty());

        let messages = prompt(
            &self.executor,
            &[
                ("ACTION_SPACE", ctx.space.describe()),
                ("ACTION", planned.action.clone()),
            ],
            &[ctx.obs],
        );
        let (_, calls, mut actions) = call_role(
            self.executor_client,
            &self.executor,
            &messages,
            retries,
            step,
            executor_parse(ctx),
        )?;
        step.tool_calls = calls;

        // The planner's sentence is authoritative for ending the episode.
        if let Some(text) = planner_answer(&planned.action) {
            if ctx.space.contains(ActionKind::Answer)
                && !actions.iter().any(|a| matches!(a, AtomicAction::Answer { .. }))
            {
                actions.push(AtomicAction::Answer { message: text });
            }
        } else if planner_terminates(&planned.action) && !actions.iter().any(AtomicAction::is_terminal) {
            actions.push(AtomicAction::Terminate {
                status: TerminateStatus::Success,
            });
        }
        Ok(actions)
    }
}

/// External planner writes one action sentence per step; the local executor
/// turns it into tool calls.
pub fn run_policy_executor(
    goal: &str,
    env: &mut dyn Environment,
    planner_client: &dyn ModelClient,
    executor_client: &dyn ModelClient,
    planner: &RoleConfig,
    cfg: &EpisodeConfig,
) -> Episode {
    let mut policy = PlannerExecutor {
        planner_client,
        executor_client,
        planner: planner.clone(),
        executor: RoleConfig::new(Role::Executor),
    };
    drive(
        goal,
        env,
        cfg,
        Mode::PolicyExecutor {
            planner: planner.clone(),
        },
        &mut policy,
    )
}
