//! Rule-based rewards for rollout scoring.
//!
//! Each sample carries a [`TaskTag`] that selects its reward function:
//! TF-IDF similarity for screen understanding and goal planning, a distance
//! decay for grounding, and class/value matching for tool calls. A length
//! penalty is added to every score. [`group_advantage`] turns a group of
//! rollout rewards into zero-mean, unit-variance advantages.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{parse_action, split_tool_calls, AtomicAction};
use crate::structured::{extract_tagged, parse_grounding_json};

/// Rollouts generated per sample during group-relative optimization.
pub const DEFAULT_GROUP_SIZE: usize = 8;

const ADVANTAGE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskTag {
    /// Action-tool alignment.
    #[serde(rename = "ATA")]
    Ata,
    /// Screen understanding.
    #[serde(rename = "SU")]
    Su,
    /// Goal planning.
    #[serde(rename = "GP")]
    Gp,
    /// Screen grounding.
    #[serde(rename = "SG")]
    Sg,
    /// Step-wise agentic decision.
    #[serde(rename = "AGENT")]
    Agent,
}

impl fmt::Display for TaskTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskTag::Ata => "ATA",
            TaskTag::Su => "SU",
            TaskTag::Gp => "GP",
            TaskTag::Sg => "SG",
            TaskTag::Agent => "AGENT",
        })
    }
}

/// What the length penalty counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthUnit {
    #[default]
    Tokens,
    Chars,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Penalty coefficient.
    pub phi: f64,
    /// Length at which the penalty reaches `-phi`.
    pub l_max: f64,
    /// Grounding reward reaches zero at `gamma` times the screen diagonal.
    pub gamma: f64,
    pub length_unit: LengthUnit,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            phi: 0.3,
            l_max: 120.0,
            gamma: 0.1,
            length_unit: LengthUnit::Tokens,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        if self.phi.is_nan() || self.phi < 0.0 {
            return Err(RewardError::InvalidConfig("phi must be >= 0".into()));
        }
        if self.l_max.is_nan() || self.l_max <= 0.0 {
            return Err(RewardError::InvalidConfig("l_max must be > 0".into()));
        }
        if self.gamma.is_nan() || self.gamma <= 0.0 {
            return Err(RewardError::InvalidConfig("gamma must be > 0".into()));
        }
        Ok(())
    }
}

/// Components of one scored sample. `total == r_agent + r_penalty`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_class: f64,
    pub r_val: f64,
    pub r_agent: f64,
    pub r_penalty: f64,
    pub total: f64,
}

impl RewardBreakdown {
    fn agent_only(r_agent: f64) -> Self {
        Self {
            r_agent,
            total: r_agent,
            ..Self::default()
        }
    }

    fn with_penalty(mut self, penalty: f64) -> Self {
        self.r_penalty = penalty;
        self.total = self.r_agent + penalty;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("screen must have positive width and height, got {0}x{1}")]
    DegenerateScreen(i64, i64),
    #[error("ground-truth action does not parse: {0}")]
    TruthUnparsable(String),
    #[error("task tag {tag} cannot be scored against a {payload} payload")]
    TagPayloadMismatch { tag: TaskTag, payload: &'static str },
    #[error("group of {0} rewards is too small; need at least 2")]
    GroupTooSmall(usize),
    #[error("invalid reward config: {0}")]
    InvalidConfig(String),
}

// ---------------------------------------------------------------------------
// Similarity
// ---------------------------------------------------------------------------

fn tokenize(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn term_counts(tokens: &[String]) -> BTreeMap<&str, f64> {
    let mut counts = BTreeMap::new();
    for t in tokens {
        *counts.entry(t.as_str()).or_insert(0.0) += 1.0;
    }
    counts
}

/// TF-IDF cosine similarity over the two-document corpus `{pred, label}`.
pub fn reward_similarity(pred: &str, label: &str) -> f64 {
    let a = tokenize(pred);
    let b = tokenize(label);
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let ca = term_counts(&a);
    let cb = term_counts(&b);
    let idf = |term: &str| {
        let df = f64::from(u8::from(ca.contains_key(term)) + u8::from(cb.contains_key(term)));
        (1.0 + 2.0 / (1.0 + df)).ln() + 1.0
    };
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (term, &n) in &ca {
        let w = n * idf(term);
        na += w * w;
        if let Some(&m) = cb.get(term) {
            dot += w * m * idf(term);
        }
    }
    for (term, &m) in &cb {
        let w = m * idf(term);
        nb += w * w;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(0.0, 1.0)
}

// ---------------------------------------------------------------------------
// Grounding
// ---------------------------------------------------------------------------

/// Ground truth for a grounding reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroundTruth {
    Point { point: (f64, f64) },
    BBox { bbox: (f64, f64, f64, f64) },
}

impl GroundTruth {
    pub fn point(x: f64, y: f64) -> Self {
        GroundTruth::Point { point: (x, y) }
    }

    /// Box given as `(x1, y1, x2, y2)` corners, inclusive.
    pub fn bbox(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        GroundTruth::BBox {
            bbox: (x1.min(x2), y1.min(y2), x1.max(x2), y1.max(y2)),
        }
    }

    fn distance(&self, (px, py): (f64, f64)) -> f64 {
        match *self {
            GroundTruth::Point { point: (tx, ty) } => (px - tx).hypot(py - ty),
            GroundTruth::BBox { bbox: (x1, y1, x2, y2) } => {
                let (x1, x2) = (x1.min(x2), x1.max(x2));
                let (y1, y2) = (y1.min(y2), y1.max(y2));
                let dx = (x1 - px).max(0.0).max(px - x2);
                let dy = (y1 - py).max(0.0).max(py - y2);
                dx.hypot(dy)
            }
        }
    }
}

/// Linear decay from 1 at the target to 0 at `gamma` screen diagonals.
/// A prediction inside (or on the edge of) a truth box scores 1.
pub fn reward_grounding(
    pred: (f64, f64),
    truth: &GroundTruth,
    screen: (i64, i64),
    gamma: f64,
) -> Result<f64, RewardError> {
    let (w, h) = screen;
    if w <= 0 || h <= 0 {
        return Err(RewardError::DegenerateScreen(w, h));
    }
    let d = truth.distance(pred);
    if d == 0.0 {
        return Ok(1.0);
    }
    let diag = (w as f64).hypot(h as f64);
    Ok((1.0 - d / (gamma * diag)).max(0.0))
}

// ---------------------------------------------------------------------------
// Tool calls
// ---------------------------------------------------------------------------

fn point_f64((x, y): (u32, u32)) -> (f64, f64) {
    (f64::from(x), f64::from(y))
}

fn value_score(pred: &AtomicAction, truth: &AtomicAction, screen: (i64, i64), gamma: f64) -> Result<f64, RewardError> {
    if !truth.kind().is_coordinate() {
        return Ok(if pred == truth { 1.0 } else { 0.0 });
    }
    let pred_points = pred.points();
    let truth_points = truth.points();
    let mut sum = 0.0;
    for (p, t) in pred_points.iter().zip(&truth_points) {
        let (tx, ty) = point_f64(*t);
        sum += reward_grounding(point_f64(*p), &GroundTruth::point(tx, ty), screen, gamma)?;
    }
    Ok(sum / truth_points.len() as f64)
}

/// Scores a predicted tool call against the ground-truth call:
/// `r_class` for the matching tool, `r_val` for its arguments.
pub fn reward_tool(
    pred: &str,
    truth: &str,
    screen: (i64, i64),
    cfg: &RewardConfig,
) -> Result<RewardBreakdown, RewardError> {
    let truth = parse_action(truth.trim()).map_err(|e| RewardError::TruthUnparsable(e.to_string()))?;
    if screen.0 <= 0 || screen.1 <= 0 {
        return Err(RewardError::DegenerateScreen(screen.0, screen.1));
    }
    let Ok(pred) = parse_action(pred.trim()) else {
        return Ok(RewardBreakdown::default());
    };
    if pred.kind() != truth.kind() {
        return Ok(RewardBreakdown::default());
    }
    let r_val = value_score(&pred, &truth, screen, cfg.gamma)?;
    let r_agent = 1.0 + r_val;
    Ok(RewardBreakdown {
        r_class: 1.0,
        r_val,
        r_agent,
        r_penalty: 0.0,
        total: r_agent,
    })
}

/// Length of `pred` in the configured penalty unit.
pub fn penalty_length(pred: &str, unit: LengthUnit) -> usize {
    match unit {
        LengthUnit::Tokens => pred.split_whitespace().count(),
        LengthUnit::Chars => pred.chars().count(),
    }
}

/// `-phi * length / l_max`, never floored.
pub fn length_penalty(pred: &str, cfg: &RewardConfig) -> f64 {
    length_penalty_for(penalty_length(pred, cfg.length_unit), cfg)
}

pub fn length_penalty_for(length: usize, cfg: &RewardConfig) -> f64 {
    -cfg.phi * length as f64 / cfg.l_max
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

/// The label a sample is scored against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthPayload {
    /// Reference text for SU and GP.
    Text(String),
    /// Target point or box for SG.
    Grounding(GroundTruth),
    /// Reference tool call for ATA and AGENT.
    Action(String),
}

impl TruthPayload {
    fn name(&self) -> &'static str {
        match self {
            TruthPayload::Text(_) => "text",
            TruthPayload::Grounding(_) => "grounding",
            TruthPayload::Action(_) => "action",
        }
    }
}

/// The first tool call in a prediction: the `<tool_call>` block when present,
/// otherwise the whole text.
fn first_call(pred: &str) -> String {
    let block = match extract_tagged("tool_call", pred) {
        Ok(Some(b)) => b,
        _ => pred,
    };
    split_tool_calls(block).into_iter().next().unwrap_or_default()
}

/// Scores one prediction with the reward function its tag selects, then adds
/// the length penalty of the full prediction.
pub fn score(
    tag: TaskTag,
    pred: &str,
    truth: &TruthPayload,
    screen: (i64, i64),
    cfg: &RewardConfig,
) -> Result<RewardBreakdown, RewardError> {
    cfg.validate()?;
    let mismatch = || RewardError::TagPayloadMismatch {
        tag,
        payload: truth.name(),
    };
    let base = match (tag, truth) {
        (TaskTag::Su | TaskTag::Gp, TruthPayload::Text(label)) => {
            RewardBreakdown::agent_only(reward_similarity(pred, label))
        }
        (TaskTag::Sg, TruthPayload::Grounding(gt)) => match parse_grounding_json(pred) {
            Ok(g) => RewardBreakdown::agent_only(reward_grounding(g.point, gt, screen, cfg.gamma)?),
            Err(_) => {
                if screen.0 <= 0 || screen.1 <= 0 {
                    return Err(RewardError::DegenerateScreen(screen.0, screen.1));
                }
                RewardBreakdown::default()
            }
        },
        (TaskTag::Ata | TaskTag::Agent, TruthPayload::Action(call)) => {
            reward_tool(&first_call(pred), call, screen, cfg)?
        }
        _ => return Err(mismatch()),
    };
    Ok(base.with_penalty(length_penalty(pred, cfg)))
}

/// Group-relative advantages `(r - mean) / (std + 1e-8)` with population std.
pub fn group_advantage(rewards: &[f64]) -> Result<Vec<f64>, RewardError> {
    let n = rewards.len();
    if n < 2 {
        return Err(RewardError::GroupTooSmall(n));
    }
    let mean = rewards.iter().sum::<f64>() / n as f64;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64;
    let denom = var.sqrt() + ADVANTAGE_EPS;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}
