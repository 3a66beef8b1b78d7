use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::action::{render_action, AtomicAction, Platform};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("environment stepped before reset")]
    NotReset,
    #[error("script exhausted after {0} steps")]
    ScriptExhausted(u32),
    #[error("invalid mock script: {0}")]
    BadScript(String),
}

/// What the agent sees after a reset or a step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvObservation {
    /// Screenshot reference as written in trajectories.
    pub screenshot: String,
    /// Resolved file location of the screenshot.
    #[serde(skip)]
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub step_index: u32,
    pub done: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env_note: Option<String>,
}

/// A device the agent can act on. One instance serves one episode at a time.
pub trait Environment {
    fn platform(&self) -> Platform;
    fn reset(&mut self, goal: &str) -> Result<EnvObservation, EnvError>;
    fn step(&mut self, action: &AtomicAction) -> Result<EnvObservation, EnvError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRow {
    /// Glob over the canonical action text (`*` and `?`), or `any`.
    pub expect: String,
    pub next: String,
    #[serde(default)]
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default = "default_platform")]
    pub platform: Platform,
    pub screen: (u32, u32),
    pub initial: String,
    pub error_screen: String,
    pub rows: Vec<ScriptRow>,
}

fn default_platform() -> Platform {
    Platform::Desktop
}

/// Scripted environment: row `i` describes what should happen on step `i`.
///
/// A matching action moves to the row's screen; a mismatch moves to the
/// error screen. Terminal actions always end the episode and may arrive after
/// the last row. Any other step past the last row is [`EnvError::ScriptExhausted`].
#[derive(Debug, Clone)]
pub struct MockEnv {
    script: MockScript,
    root: PathBuf,
    patterns: Vec<Option<Regex>>,
    cursor: usize,
    step_index: u32,
    current: Option<String>,
}

fn glob_regex(glob: &str) -> Result<Regex, regex::Error> {
    let mut re = String::from("^");
    for c in glob.chars() {
        match c {
            '*' => re.push_str(".*"),
            '?' => re.push('.'),
            c => re.push_str(&regex::escape(c.encode_utf8(&mut [0; 4]))),
        }
    }
    re.push('$');
    Regex::new(&format!("(?s){re}"))
}

impl MockEnv {
    /// `root` is the directory screenshot references are relative to.
    pub fn new(script: MockScript, root: impl Into<PathBuf>) -> Result<Self, EnvError> {
        if script.screen.0 == 0 || script.screen.1 == 0 {
            return Err(EnvError::BadScript("screen dimensions must be positive".into()));
        }
        let patterns = script
            .rows
            .iter()
            .map(|r| {
                if r.expect.trim().eq_ignore_ascii_case("any") {
                    Ok(None)
                } else {
                    glob_regex(r.expect.trim())
                        .map(Some)
                        .map_err(|e| EnvError::BadScript(e.to_string()))
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            script,
            root: root.into(),
            patterns,
            cursor: 0,
            step_index: 0,
            current: None,
        })
    }

    /// Loads a script file; screenshots resolve against the file's directory.
    pub fn from_file(path: &Path) -> Result<Self, EnvError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| EnvError::BadScript(format!("{}: {e}", path.display())))?;
        let script: MockScript = serde_json::from_str(&text).map_err(|e| EnvError::BadScript(e.to_string()))?;
        Self::new(script, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }

    fn observe(&self, screenshot: String, done: bool, env_note: Option<String>) -> EnvObservation {
        EnvObservation {
            path: self.root.join(&screenshot),
            screenshot,
            width: self.script.screen.0,
            height: self.script.screen.1,
            step_index: self.step_index,
            done,
            env_note,
        }
    }
}

impl Environment for MockEnv {
    fn platform(&self) -> Platform {
        self.script.platform
    }

    fn reset(&mut self, _goal: &str) -> Result<EnvObservation, EnvError> {
        self.cursor = 0;
        self.step_index = 0;
        self.current = Some(self.script.initial.clone());
        Ok(self.observe(self.script.initial.clone(), false, None))
    }

    fn step(&mut self, action: &AtomicAction) -> Result<EnvObservation, EnvError> {
        let current = self.current.clone().ok_or(EnvError::NotReset)?;
        let terminal = action.is_terminal();
        if self.cursor >= self.script.rows.len() {
            if terminal {
                self.step_index += 1;
                return Ok(self.observe(current, true, None));
            }
            return Err(EnvError::ScriptExhausted(self.step_index));
        }
        let row = &self.script.rows[self.cursor];
        let text = render_action(action);
        let matched = self.patterns[self.cursor].as_ref().is_none_or(|re| re.is_match(&text));
        self.cursor += 1;
        self.step_index += 1;
        let (screen, done, note) = if matched {
            (row.next.clone(), row.done || terminal, None)
        } else {
            (
                self.script.error_screen.clone(),
                terminal,
                Some(format!("`{text}` did not match `{}`", row.expect)),
            )
        };
        self.current = Some(screen.clone());
        Ok(self.observe(screen, done, note))
    }
}
