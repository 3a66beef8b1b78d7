use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use guiagent_core::orchestrator::EpisodeConfig;
use guiagent_core::pwce::PwceConfig;
use guiagent_core::rewards::RewardConfig;
use guiagent_core::runtime::{HttpConfig, HttpModelClient, ModelClient, ScriptedModel};
use serde::Deserialize;

use crate::{CliError, CliResult};

/// The `--config` file.
///
/// ```toml
/// [pwce]
/// alpha = 0.5
/// beta = 1.5
/// eps = 1e-12
/// lambda = 0.09
///
/// [reward]
/// phi = 0.3
/// l_max = 120
/// gamma = 0.1
///
/// [episode]
/// t_max = 15
/// history_window = 10
/// screenshot_window = 3
///
/// [endpoints.planner]
/// endpoint = "https://example.invalid/v1/chat/completions"
/// model = "planner-model"
/// ```
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub pwce: PwceConfig,
    pub reward: RewardConfig,
    pub episode: EpisodeConfig,
    pub endpoints: BTreeMap<String, HttpConfig>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: Config =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        cfg.pwce.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        cfg.reward.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        cfg.episode.validate().map_err(CliError::Usage)?;
        Ok(cfg)
    }

    /// Resolves `mock:PATH`, an http(s) URL, or a named `[endpoints]` entry.
    pub fn client(&self, spec: &str) -> CliResult<Arc<dyn ModelClient>> {
        if let Some(path) = spec.strip_prefix("mock:") {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read mock model {path}: {e}")))?;
            let model = ScriptedModel::from_json(&text)
                .map_err(|e| CliError::Usage(format!("invalid mock model {path}: {e}")))?;
            return Ok(Arc::new(model));
        }
        if spec.starts_with("http://") || spec.starts_with("https://") {
            return Ok(Arc::new(HttpModelClient::new(HttpConfig {
                endpoint: spec.to_string(),
                ..HttpConfig::default()
            })));
        }
        match self.endpoints.get(spec) {
            Some(http) => Ok(Arc::new(HttpModelClient::new(http.clone()))),
            None => Err(CliError::Usage(format!("unknown endpoint `{spec}`"))),
        }
    }
}

pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// Parses every non-blank line as JSON.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

pub fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("reports serialize")
}
