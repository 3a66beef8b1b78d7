//! Parsers for the structured text each role emits.
//!
//! Model output is noisy, so every parser here is lenient about surrounding
//! prose and code fences, and total: any input yields a value or a
//! [`StructuredError`]. Semantic checks belong to the callers.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::action::split_tool_calls;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StructuredError {
    #[error("tag <{0}> is never closed")]
    UnclosedTag(String),
    #[error("missing <{0}> block")]
    Missing(String),
    #[error("missing <tool_call> block")]
    MissingToolCall,
    #[error("missing <action> block")]
    MissingAction,
    #[error("no JSON object found")]
    NotJson,
    #[error("missing key `{0}`")]
    MissingKey(String),
    #[error("bad point: {0}")]
    BadPoint(String),
}

/// `<think>…</think><action>…</action><tool_call>…</tool_call>`
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionBlock {
    pub think: String,
    pub action: String,
    pub tool_calls: Vec<String>,
}

/// `Thought: … <note>…</note> <action>…</action>`
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerTurn {
    pub thought: String,
    pub note: String,
    pub action: String,
}

/// `{"Planning": …, "Tips": …}`
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanOutput {
    pub planning: String,
    pub tips: String,
}

/// `{"point_2d": [x, y], "label": …}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingOutput {
    pub point: (f64, f64),
    pub label: String,
}

/// Returns the trimmed content of the first `<tag>…</tag>` pair, `None` if
/// the opening tag never appears.
pub fn extract_tagged<'a>(tag: &str, text: &'a str) -> Result<Option<&'a str>, StructuredError> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let Some(start) = text.find(&open) else {
        return Ok(None);
    };
    let body = &text[start + open.len()..];
    match body.find(&close) {
        Some(end) => Ok(Some(body[..end].trim())),
        None => Err(StructuredError::UnclosedTag(tag.to_string())),
    }
}

fn required_tag<'a>(tag: &str, text: &'a str) -> Result<&'a str, StructuredError> {
    extract_tagged(tag, text)?.ok_or_else(|| StructuredError::Missing(tag.to_string()))
}

/// Parses an end-to-end or executor decision. `<answer>` is accepted as a
/// synonym for `<action>`; `<think>` is optional.
pub fn parse_decision(text: &str) -> Result<DecisionBlock, StructuredError> {
    let block = extract_tagged("tool_call", text)?.ok_or(StructuredError::MissingToolCall)?;
    let tool_calls = split_tool_calls(block);
    if tool_calls.is_empty() {
        return Err(StructuredError::MissingToolCall);
    }
    let action = match extract_tagged("action", text)? {
        Some(a) => a,
        None => extract_tagged("answer", text)?.ok_or(StructuredError::MissingAction)?,
    };
    let think = extract_tagged("think", text)?.unwrap_or_default();
    Ok(DecisionBlock {
        think: think.to_string(),
        action: action.to_string(),
        tool_calls,
    })
}

/// Observer output: the `<screen2word>` body.
pub fn parse_screen2word(text: &str) -> Result<String, StructuredError> {
    required_tag("screen2word", text).map(str::to_string)
}

/// External-planner turn. The thought is whatever precedes the first tag,
/// minus an optional `Thought:` label.
pub fn parse_planner_turn(text: &str) -> Result<PlannerTurn, StructuredError> {
    let action = extract_tagged("action", text)?.unwrap_or_default();
    if action.is_empty() {
        return Err(StructuredError::MissingAction);
    }
    let note = extract_tagged("note", text)?.unwrap_or_default();
    let head = text.find('<').map_or(text, |i| &text[..i]).trim();
    let thought = strip_label(head, "thought").trim();
    Ok(PlannerTurn {
        thought: thought.to_string(),
        note: note.to_string(),
        action: action.to_string(),
    })
}

fn strip_label<'a>(s: &'a str, label: &str) -> &'a str {
    let t = s.trim_start_matches(['*', ' ']);
    if t.len() >= label.len() && t[..label.len()].eq_ignore_ascii_case(label) {
        let rest = t[label.len()..].trim_start_matches('*');
        if let Some(r) = rest.trim_start().strip_prefix(':') {
            return r.trim_start_matches('*');
        }
    }
    s
}

/// Planner JSON: `Planning` and `Tips`, keys matched case-insensitively.
pub fn parse_plan_json(text: &str) -> Result<PlanOutput, StructuredError> {
    let obj = parse_lenient_object(text)?;
    Ok(PlanOutput {
        planning: required_string(&obj, "Planning")?,
        tips: required_string(&obj, "Tips")?,
    })
}

/// Grounding JSON: a non-negative `point_2d` pair plus an optional label.
pub fn parse_grounding_json(text: &str) -> Result<GroundingOutput, StructuredError> {
    let mut obj = parse_lenient_object(text)?;
    let key = obj
        .keys()
        .find(|k| k.trim().eq_ignore_ascii_case("point_2d"))
        .cloned()
        .ok_or_else(|| StructuredError::MissingKey("point_2d".into()))?;
    // unquoted values come back from the key splitter as strings
    if let Some(Value::String(s)) = obj.get(&key) {
        let parsed = serde_json::from_str::<Value>(s)
            .map_err(|_| StructuredError::BadPoint(format!("`{s}` is not an [x, y] pair")))?;
        obj.insert(key, parsed);
    }
    grounding_from(&obj)
}

fn grounding_from(obj: &Map<String, Value>) -> Result<GroundingOutput, StructuredError> {
    let Some(Value::Array(items)) = lookup(obj, "point_2d") else {
        return Err(StructuredError::BadPoint("point_2d is not an array".into()));
    };
    if items.len() != 2 {
        return Err(StructuredError::BadPoint(format!(
            "expected 2 coordinates, got {}",
            items.len()
        )));
    }
    let coord = |v: &Value| -> Result<f64, StructuredError> {
        let n = v
            .as_f64()
            .ok_or_else(|| StructuredError::BadPoint(format!("{v} is not a number")))?;
        if !n.is_finite() || n < 0.0 {
            return Err(StructuredError::BadPoint(format!("{n} is negative or not finite")));
        }
        Ok(n)
    };
    let label = match lookup(obj, "label") {
        Some(Value::String(s)) => s.trim().to_string(),
        Some(Value::Null) | None => String::new(),
        Some(other) => other.to_string(),
    };
    Ok(GroundingOutput {
        point: (coord(&items[0])?, coord(&items[1])?),
        label,
    })
}

fn lookup<'a>(obj: &'a Map<String, Value>, key: &str) -> Option<&'a Value> {
    obj.iter()
        .find(|(k, _)| k.trim().eq_ignore_ascii_case(key))
        .map(|(_, v)| v)
}

/// Fetches `key` as a non-empty string; non-string values are stringified.
pub(crate) fn required_string(obj: &Map<String, Value>, key: &str) -> Result<String, StructuredError> {
    let value = match lookup(obj, key) {
        Some(Value::String(s)) => s.trim().to_string(),
        Some(Value::Null) | None => String::new(),
        Some(other) => other.to_string(),
    };
    if value.is_empty() {
        return Err(StructuredError::MissingKey(key.to_string()));
    }
    Ok(value)
}

/// Finds the first JSON object in `text` and parses it.
///
/// Code fences are stripped and the first balanced `{…}` is taken. When that
/// is not valid JSON (prompt formats often leave values unquoted) the object
/// is split on its `"key":` markers instead, each value running to the next
/// marker.
pub fn parse_lenient_object(text: &str) -> Result<Map<String, Value>, StructuredError> {
    let cleaned = strip_code_fences(text);
    let candidate = first_object(&cleaned).ok_or(StructuredError::NotJson)?;
    if let Ok(Value::Object(map)) = serde_json::from_str::<Value>(candidate) {
        return Ok(map);
    }
    let map = split_on_keys(candidate);
    if map.is_empty() {
        Err(StructuredError::NotJson)
    } else {
        Ok(map)
    }
}

fn strip_code_fences(text: &str) -> String {
    text.lines()
        .filter(|l| !l.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// The first balanced `{…}` span, tracking double-quoted strings. Falls back
/// to first `{` through last `}` when quoting is too broken to balance.
fn first_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_str {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_str = false;
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    let end = text.rfind('}')?;
    (end > start).then(|| &text[start..=end])
}

fn split_on_keys(obj: &str) -> Map<String, Value> {
    let inner = obj.trim().trim_start_matches('{').trim_end_matches('}');
    // (key, start of key marker, start of value)
    let mut markers: Vec<(String, usize, usize)> = Vec::new();
    let bytes = inner.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'"' {
            if let Some(len) = inner[i + 1..].find('"') {
                let key = &inner[i + 1..i + 1 + len];
                let after = i + 1 + len + 1;
                let rest = &inner[after..];
                let trimmed = rest.trim_start();
                let is_key = !key.is_empty()
                    && key.len() <= 64
                    && key.chars().all(|c| c.is_alphanumeric() || c == '_' || c == ' ')
                    && trimmed.starts_with(':')
                    && preceded_by_separator(inner, i);
                if is_key {
                    let value_start = after + (rest.len() - trimmed.len()) + 1;
                    markers.push((key.to_string(), i, value_start));
                    i = value_start;
                    continue;
                }
            }
        }
        i += inner[i..].chars().next().map_or(1, char::len_utf8);
    }
    let mut map = Map::new();
    for (n, (key, _, value_start)) in markers.iter().enumerate() {
        let value_end = markers.get(n + 1).map_or(inner.len(), |m| m.1);
        let raw = inner[*value_start..value_end].trim().trim_end_matches(',').trim();
        let value = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| {
            let unquoted = raw.strip_prefix('"').and_then(|r| r.strip_suffix('"')).unwrap_or(raw);
            Value::String(unquoted.trim().to_string())
        });
        map.entry(key.clone()).or_insert(value);
    }
    map
}

fn preceded_by_separator(s: &str, idx: usize) -> bool {
    s[..idx]
        .chars()
        .rev()
        .find(|c| !c.is_whitespace())
        .is_none_or(|c| c == ',' || c == '{')
}
