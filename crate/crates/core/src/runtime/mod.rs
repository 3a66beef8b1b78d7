//! Model endpoints and the environment contract.
//!
//! Roles talk to a [`ModelClient`]; episodes act on an [`Environment`]. Both
//! come with deterministic scripted implementations so whole episodes can be
//! replayed without a network or a device.

mod client;
mod env;

pub use client::{
    Completion, HttpConfig, HttpModelClient, ModelClient, ModelError, RecordedCall, RecordingClient, ScriptedModel,
};
pub use env::{EnvError, EnvObservation, Environment, MockEnv, MockScript, ScriptRow};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::synthesis::Template;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    #[serde(rename = "end2end")]
    End2End,
    Observer,
    Planner,
    Allocator,
    Executor,
    ExternalPlanner,
    Teacher,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::End2End => "end2end",
            Role::Observer => "observer",
            Role::Planner => "planner",
            Role::Allocator => "allocator",
            Role::Executor => "executor",
            Role::ExternalPlanner => "external_planner",
            Role::Teacher => "teacher",
        }
    }

    fn default_template(self) -> Template {
        match self {
            Role::End2End => Template::E2e,
            Role::Observer => Template::MasObserver,
            Role::Planner => Template::MasPlanner,
            Role::Allocator => Template::MasAllocator,
            Role::Executor => Template::MasExecutor,
            Role::ExternalPlanner => Template::PlannerAndroidWorld,
            Role::Teacher => Template::Ata,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown instruction asset `{0}`")]
    UnknownInstruction(String),
    #[error("max_history_images must be at least 1")]
    NoHistoryImages,
}

/// How one role is prompted and sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleConfig {
    pub role: Role,
    /// Id of a bundled prompt asset, e.g. `mas_executor`.
    pub system_instruction: String,
    pub temperature: f64,
    pub max_output_units: u32,
    pub max_history_images: u32,
}

impl RoleConfig {
    pub fn new(role: Role) -> Self {
        Self {
            role,
            system_instruction: role.default_template().id().to_string(),
            temperature: 0.0,
            max_output_units: 1024,
            max_history_images: 1,
        }
    }

    pub fn with_instruction(mut self, template: Template) -> Self {
        self.system_instruction = template.id().to_string();
        self
    }

    pub fn template(&self) -> Result<Template, ConfigError> {
        Template::from_id(&self.system_instruction)
            .ok_or_else(|| ConfigError::UnknownInstruction(self.system_instruction.clone()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.template()?;
        if self.max_history_images == 0 {
            return Err(ConfigError::NoHistoryImages);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Author {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Part {
    Text { text: String },
    Image { path: PathBuf },
}

impl Part {
    pub fn text(t: impl Into<String>) -> Self {
        Part::Text { text: t.into() }
    }

    pub fn image(p: impl Into<PathBuf>) -> Self {
        Part::Image { path: p.into() }
    }
}

/// One chat message. Always has at least one part.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub author: Author,
    pub parts: Vec<Part>,
}

impl Message {
    pub fn system(text: impl Into<String>) -> Self {
        Self {
            author: Author::System,
            parts: vec![Part::text(text)],
        }
    }

    pub fn user(parts: Vec<Part>) -> Self {
        assert!(!parts.is_empty(), "a message needs at least one part");
        Self {
            author: Author::User,
            parts,
        }
    }

    /// Concatenated text parts.
    pub fn text(&self) -> String {
        self.parts
            .iter()
            .filter_map(|p| match p {
                Part::Text { text } => Some(text.as_str()),
                Part::Image { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn images(&self) -> impl Iterator<Item = &PathBuf> {
        self.parts.iter().filter_map(|p| match p {
            Part::Image { path } => Some(path),
            Part::Text { .. } => None,
        })
    }
}
