//! Role-oriented teacher prompts and output validation.
//!
//! Every prompt the system sends lives in `assets/prompts` as plain text with
//! `{UPPER_CASE}` slots. [`build_prompt`] fills the slots for one of the five
//! synthesis tasks, [`validate_output`] turns teacher text into a typed
//! payload, and [`synthesize_record`] runs the ask/validate/retry loop.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::action::{parse_action, render_action, ActionSpace, Platform};
use crate::runtime::{Message, ModelClient, ModelError, Part, Role, RoleConfig};
use crate::structured::{extract_tagged, parse_lenient_object, parse_screen2word, required_string, StructuredError};

/// A bundled prompt asset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    Su,
    SgEnrich,
    Ata,
    Lcc,
    Gp,
    E2e,
    Grounding,
    MasObserver,
    MasPlanner,
    MasAllocator,
    MasExecutor,
    PlannerTurn,
    PlannerAndroidWorld,
    PlannerMiniwob,
    PlannerOsworld,
    PlannerAndroidWorldGpt5,
}

impl Template {
    pub const ALL: [Template; 16] = [
        Template::Su,
        Template::SgEnrich,
        Template::Ata,
        Template::Lcc,
        Template::Gp,
        Template::E2e,
        Template::Grounding,
        Template::MasObserver,
        Template::MasPlanner,
        Template::MasAllocator,
        Template::MasExecutor,
        Template::PlannerTurn,
        Template::PlannerAndroidWorld,
        Template::PlannerMiniwob,
        Template::PlannerOsworld,
        Template::PlannerAndroidWorldGpt5,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Template::Su => "su",
            Template::SgEnrich => "sg_enrich",
            Template::Ata => "ata",
            Template::Lcc => "lcc",
            Template::Gp => "gp",
            Template::E2e => "e2e",
            Template::Grounding => "grounding",
            Template::MasObserver => "mas_observer",
            Template::MasPlanner => "mas_planner",
            Template::MasAllocator => "mas_allocator",
            Template::MasExecutor => "mas_executor",
            Template::PlannerTurn => "planner_turn",
            Template::PlannerAndroidWorld => "planner_androidworld",
            Template::PlannerMiniwob => "planner_miniwob",
            Template::PlannerOsworld => "planner_osworld",
            Template::PlannerAndroidWorldGpt5 => "planner_androidworld_gpt5",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.id() == id)
    }

    pub fn text(self) -> &'static str {
        match self {
            Template::Su => include_str!("../assets/prompts/su.txt"),
            Template::SgEnrich => include_str!("../assets/prompts/sg_enrich.txt"),
            Template::Ata => include_str!("../assets/prompts/ata.txt"),
            Template::Lcc => include_str!("../assets/prompts/lcc.txt"),
            Template::Gp => include_str!("../assets/prompts/gp.txt"),
            Template::E2e => include_str!("../assets/prompts/e2e.txt"),
            Template::Grounding => include_str!("../assets/prompts/grounding.txt"),
            Template::MasObserver => include_str!("../assets/prompts/mas_observer.txt"),
            Template::MasPlanner => include_str!("../assets/prompts/mas_planner.txt"),
            Template::MasAllocator => include_str!("../assets/prompts/mas_allocator.txt"),
            Template::MasExecutor => include_str!("../assets/prompts/mas_executor.txt"),
            Template::PlannerTurn => include_str!("../assets/prompts/planner_turn.txt"),
            Template::PlannerAndroidWorld => include_str!("../assets/prompts/planner_androidworld.txt"),
            Template::PlannerMiniwob => include_str!("../assets/prompts/planner_miniwob.txt"),
            Template::PlannerOsworld => include_str!("../assets/prompts/planner_osworld.txt"),
            Template::PlannerAndroidWorldGpt5 => include_str!("../assets/prompts/planner_androidworld_gpt5.txt"),
        }
    }

    /// Slot names in order of first appearance.
    pub fn placeholders(self) -> Vec<&'static str> {
        let mut out: Vec<&'static str> = Vec::new();
        for c in SLOT.captures_iter(self.text()) {
            let name = c.get(1).unwrap().as_str();
            if !out.contains(&name) {
                out.push(name);
            }
        }
        out
    }

    /// Fills every slot from `values` in a single pass, so substituted text
    /// is never scanned for further slots.
    pub fn render(self, values: &BTreeMap<&str, String>) -> Result<String, SynthesisError> {
        if let Some(missing) = self.placeholders().into_iter().find(|p| !values.contains_key(p)) {
            return Err(SynthesisError::MissingPlaceholder(missing.to_string()));
        }
        Ok(SLOT
            .replace_all(self.text(), |c: &regex::Captures| {
                values[c.get(1).unwrap().as_str()].clone()
            })
            .into_owned())
    }
}

static SLOT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{([A-Z][A-Z0-9_]*)\}").unwrap());

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthesisTask {
    Ata,
    Lcc,
    Su,
    Gp,
    #[serde(rename = "sg")]
    SgEnrich,
}

impl SynthesisTask {
    pub fn template(self) -> Template {
        match self {
            SynthesisTask::Ata => Template::Ata,
            SynthesisTask::Lcc => Template::Lcc,
            SynthesisTask::Su => Template::Su,
            SynthesisTask::Gp => Template::Gp,
            SynthesisTask::SgEnrich => Template::SgEnrich,
        }
    }
}

impl std::str::FromStr for SynthesisTask {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ata" => Ok(Self::Ata),
            "lcc" => Ok(Self::Lcc),
            "su" => Ok(Self::Su),
            "gp" => Ok(Self::Gp),
            "sg" | "sg_enrich" => Ok(Self::SgEnrich),
            other => Err(format!("unknown synthesis task `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthesisError {
    #[error("missing input for placeholder {{{0}}}")]
    MissingPlaceholder(String),
    #[error("format violation ({rule}): {detail}")]
    FormatViolation { rule: String, detail: String },
    #[error("teacher unavailable: {0}")]
    TeacherUnavailable(ModelError),
}

fn violation(rule: &str, detail: impl Into<String>) -> SynthesisError {
    SynthesisError::FormatViolation {
        rule: rule.to_string(),
        detail: detail.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeStep {
    pub screenshot: PathBuf,
    pub action: String,
}

/// One line of a synthesis input file. Which fields matter depends on the
/// task: ATA and LCC describe the last step, GP uses the whole trajectory,
/// SU and SG work on a single screenshot.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisInput {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub goal: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub steps: Vec<EpisodeStep>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior_thought: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub platform: Option<Platform>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub screenshot: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub point: Option<(u32, u32)>,
}

impl SynthesisInput {
    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("inputs serialize");
        hex::encode(Sha256::digest(bytes))
    }

    fn current_step(&self) -> Result<&EpisodeStep, SynthesisError> {
        self.steps
            .last()
            .ok_or_else(|| SynthesisError::MissingPlaceholder("STEPS".into()))
    }

    fn need<'a, T>(value: &'a Option<T>, slot: &str) -> Result<&'a T, SynthesisError> {
        value
            .as_ref()
            .ok_or_else(|| SynthesisError::MissingPlaceholder(slot.into()))
    }
}

fn numbered(lines: &[String]) -> String {
    if lines.is_empty() {
        return "(no actions yet)".into();
    }
    lines
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{}. {l}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

fn screenshot_parts(paths: &[&PathBuf]) -> Vec<Part> {
    if paths.is_empty() {
        return vec![Part::text("(no screenshot)")];
    }
    paths
        .iter()
        .enumerate()
        .flat_map(|(i, p)| [Part::text(format!("Screenshot {}:", i + 1)), Part::image(*p)])
        .collect()
}

/// System message with the filled template, then a user message carrying
/// the screenshots in step order.
pub fn build_prompt(task: SynthesisTask, input: &SynthesisInput) -> Result<Vec<Message>, SynthesisError> {
    let mut values: BTreeMap<&str, String> = BTreeMap::new();
    let mut images: Vec<&PathBuf> = Vec::new();
    match task {
        SynthesisTask::Ata => {
            let step = input.current_step()?;
            let space = ActionSpace::for_platform(input.platform.unwrap_or(Platform::Desktop));
            values.insert("ACTION_SPACE", space.describe());
            values.insert("ATOMIC_ACTION", step.action.clone());
            images.push(&step.screenshot);
        }
        SynthesisTask::Lcc => {
            let step = input.current_step()?;
            let previous: Vec<String> = input.steps[..input.steps.len() - 1]
                .iter()
                .map(|s| s.action.clone())
                .collect();
            values.insert("PREVIOUS_ACTIONS", numbered(&previous));
            values.insert(
                "THE_THOUGHT_PROCESS_OF_THE_PREVIOUS_STEP",
                input.prior_thought.clone().unwrap_or_else(|| "(none)".into()),
            );
            values.insert("GOAL", SynthesisInput::need(&input.goal, "GOAL")?.clone());
            values.insert("CURRENT_ATOMIC_ACTION", step.action.clone());
            images.push(&step.screenshot);
        }
        SynthesisTask::Su => {
            images.push(SynthesisInput::need(&input.screenshot, "SCREENSHOT")?);
        }
        SynthesisTask::Gp => {
            values.insert("GOAL", SynthesisInput::need(&input.goal, "GOAL")?.clone());
            if input.steps.is_empty() {
                return Err(SynthesisError::MissingPlaceholder("STEPS".into()));
            }
            images.extend(input.steps.iter().map(|s| &s.screenshot));
        }
        SynthesisTask::SgEnrich => {
            values.insert(
                "DESCRIPTION",
                SynthesisInput::need(&input.description, "DESCRIPTION")?.clone(),
            );
            let (x, y) = *SynthesisInput::need(&input.point, "COORDINATES")?;
            values.insert("COORDINATES", format!("{x}, {y}"));
            images.extend(input.screenshot.as_ref());
        }
    }
    let system = task.template().render(&values)?;
    Ok(vec![Message::system(system), Message::user(screenshot_parts(&images))])
}

/// Validated teacher output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Ata {
        tool_call: String,
        semantic_description: String,
    },
    Lcc {
        thought: String,
    },
    Su {
        description: String,
    },
    Gp {
        goal: String,
        planning: String,
        tips: String,
    },
    Sg {
        description: String,
        point: (u32, u32),
    },
}

fn structured_violation(e: StructuredError) -> SynthesisError {
    match e {
        StructuredError::MissingKey(k) => violation(&k, format!("missing key `{k}`")),
        StructuredError::NotJson => violation("json", "no JSON object found"),
        StructuredError::UnclosedTag(t) => violation(&t, format!("unclosed <{t}> tag")),
        StructuredError::Missing(t) => violation(&t, format!("missing <{t}> block")),
        other => violation("format", other.to_string()),
    }
}

static BULLET: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^\s*(?:[-*•]\s|\d+[.)]\s)").unwrap());
static BLANK_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\n\s*\n").unwrap());
static THOUGHT_LABEL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?:\*\*)?Thought(?:\*\*)?\s*:\s*(?:\*\*)?").unwrap());
static DIGITS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+").unwrap());

/// True when the text names the point as an adjacent digit pair separated by
/// at most three characters, e.g. `12, 34`, `(12,34)` or `x=12,y=34`.
pub fn leaks_coordinates(text: &str, (x, y): (u32, u32)) -> bool {
    let runs: Vec<_> = DIGITS.find_iter(text).collect();
    runs.windows(2).any(|w| {
        let gap = w[1].start() - w[0].end();
        (1..=3).contains(&gap) && w[0].as_str().parse() == Ok(x) && w[1].as_str().parse() == Ok(y)
    })
}

/// Checks teacher text against the task's output contract.
pub fn validate_output(task: SynthesisTask, text: &str, input: &SynthesisInput) -> Result<Payload, SynthesisError> {
    match task {
        SynthesisTask::Ata => {
            let obj = parse_lenient_object(text).map_err(structured_violation)?;
            let call = required_string(&obj, "tool_call").map_err(structured_violation)?;
            let description = required_string(&obj, "semantic_description").map_err(structured_violation)?;
            let predicted = parse_action(&call).map_err(|e| violation("tool_call_parse", e.to_string()))?;
            if let Some(step) = input.steps.last() {
                let expected = parse_action(&step.action).map_err(|e| violation("input_action", e.to_string()))?;
                if predicted != expected {
                    return Err(violation(
                        "tool_call_mismatch",
                        format!(
                            "expected `{}`, got `{}`",
                            render_action(&expected),
                            render_action(&predicted)
                        ),
                    ));
                }
            }
            Ok(Payload::Ata {
                tool_call: render_action(&predicted),
                semantic_description: description,
            })
        }
        SynthesisTask::Lcc => {
            let body = text.trim();
            let body = THOUGHT_LABEL.replace(body, "");
            let body = body.trim();
            if body.is_empty() {
                return Err(violation("empty", "thought is empty"));
            }
            if BLANK_LINE.is_match(body) || BULLET.is_match(body) {
                return Err(violation(
                    "single_paragraph",
                    "thought must be one continuous paragraph",
                ));
            }
            Ok(Payload::Lcc {
                thought: body.to_string(),
            })
        }
        SynthesisTask::Su => {
            let description = parse_screen2word(text).map_err(structured_violation)?;
            if description.trim().is_empty() {
                return Err(violation("screen2word", "description is empty"));
            }
            Ok(Payload::Su { description })
        }
        SynthesisTask::Gp => {
            let obj = parse_lenient_object(text).map_err(structured_violation)?;
            let planning = required_string(&obj, "Planning").map_err(structured_violation)?;
            let tips = required_string(&obj, "Tips").map_err(structured_violation)?;
            let goal = required_string(&obj, "Goal")
                .ok()
                .or_else(|| input.goal.clone())
                .ok_or_else(|| violation("Goal", "no goal in output or input"))?;
            Ok(Payload::Gp { goal, planning, tips })
        }
        SynthesisTask::SgEnrich => {
            let description = text.trim().trim_matches('"').trim().to_string();
            if description.is_empty() {
                return Err(violation("empty", "description is empty"));
            }
            if matches!(extract_tagged("point", &description), Ok(Some(_))) {
                return Err(violation("coordinate_leakage", "output contains a <point> tag"));
            }
            let point = input
                .point
                .ok_or_else(|| SynthesisError::MissingPlaceholder("COORDINATES".into()))?;
            if leaks_coordinates(&description, point) {
                return Err(violation(
                    "coordinate_leakage",
                    format!("output mentions {}, {}", point.0, point.1),
                ));
            }
            Ok(Payload::Sg { description, point })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesizedRecord {
    pub task: SynthesisTask,
    pub inputs_digest: String,
    pub status: RecordStatus,
    /// Format retries spent (transport retries are not counted).
    pub retry_count: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub payload: Option<Payload>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// Prompts the teacher, validating each reply; a format violation triggers
/// another ask, up to `retries` extra asks, after which the record is kept as
/// rejected with the last violation as its reason.
pub fn synthesize_record(
    task: SynthesisTask,
    input: &SynthesisInput,
    client: &dyn ModelClient,
    retries: u32,
) -> Result<SynthesizedRecord, SynthesisError> {
    let messages = build_prompt(task, input)?;
    let role = RoleConfig::new(Role::Teacher).with_instruction(task.template());
    let mut record = SynthesizedRecord {
        task,
        inputs_digest: input.digest(),
        status: RecordStatus::Rejected,
        retry_count: 0,
        payload: None,
        reason: None,
    };
    for attempt in 0..=retries {
        let reply = client
            .complete(&role, &messages)
            .map_err(SynthesisError::TeacherUnavailable)?;
        record.retry_count = attempt;
        match validate_output(task, &reply.text, input) {
            Ok(payload) => {
                record.status = RecordStatus::Accepted;
                record.payload = Some(payload);
                record.reason = None;
                return Ok(record);
            }
            Err(e @ SynthesisError::FormatViolation { .. }) => {
                log::debug!("{task:?} attempt {} rejected: {e}", attempt + 1);
                record.reason = Some(e.to_string());
            }
            Err(e) => return Err(e),
        }
    }
    Ok(record)
}
