use std::path::{Path, PathBuf};
use std::sync::Arc;

use mirror_core::datasource::{DataSourceConfig, DataSourceKind};
use mirror_core::llm_provider::{
    HttpProvider, HttpProviderConfig, LlmProvider, ScriptedProvider,
};
use mirror_core::orchestrator::OrchestratorConfig;
use serde::{Deserialize, Serialize};

/// Environment variable that overrides `provider.api_key`.
pub const API_KEY_ENV: &str = "MIRROR_API_KEY";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot load transcript {path}: {source}")]
    Transcript {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProviderSettings {
    Http(HttpProviderConfig),
    /// Replays a transcript file; for demos and tests.
    Scripted { transcript: PathBuf },
}

impl ProviderSettings {
    pub fn build(&self) -> Result<Arc<dyn LlmProvider>, ConfigError> {
        Ok(match self {
            ProviderSettings::Http(config) => Arc::new(HttpProvider::new(config.clone())),
            ProviderSettings::Scripted { transcript } => {
                let provider = ScriptedProvider::from_file(transcript).map_err(|source| {
                    ConfigError::Transcript {
                        path: transcript.clone(),
                        source,
                    }
                })?;
                Arc::new(provider)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    pub data_dir: PathBuf,
    pub provider: ProviderSettings,
    #[serde(default)]
    pub orchestrator: OrchestratorConfig,
    /// Origins allowed by CORS; empty disables CORS headers.
    #[serde(default)]
    pub cors_origins: Vec<String>,
    /// When set, every request must carry `Authorization: Bearer <token>`.
    #[serde(default)]
    pub auth_token: Option<String>,
    /// Sources registered at startup unless already stored.
    #[serde(default)]
    pub datasources: Vec<DataSourceConfig>,
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

impl ServerConfig {
    pub fn new(data_dir: impl Into<PathBuf>, provider: ProviderSettings) -> Self {
        Self {
            listen: default_listen(),
            data_dir: data_dir.into(),
            provider,
            orchestrator: OrchestratorConfig::default(),
            cors_origins: Vec::new(),
            auth_token: None,
            datasources: Vec::new(),
        }
    }

    /// Reads a JSON config file and applies the API key override.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        let mut config: ServerConfig =
            serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
                path: path.to_owned(),
                source,
            })?;
        // Relative paths are taken from the config file's directory.
        let base = path.parent().unwrap_or(Path::new("."));
        config.data_dir = base.join(&config.data_dir);
        if let ProviderSettings::Scripted { transcript } = &mut config.provider {
            *transcript = base.join(&*transcript);
        }
        for ds in &mut config.datasources {
            if ds.kind != DataSourceKind::NetworkedRelational {
                ds.location = base.join(&ds.location).to_string_lossy().into_owned();
            }
        }
        config.apply_env_key(std::env::var(API_KEY_ENV).ok());
        config.validate()?;
        Ok(config)
    }

    pub fn apply_env_key(&mut self, key: Option<String>) {
        if let (ProviderSettings::Http(http), Some(key)) = (&mut self.provider, key) {
            if !key.is_empty() {
                http.api_key = Some(key);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.orchestrator.validate().map_err(ConfigError::Invalid)?;
        if self.listen.trim().is_empty() {
            return Err(ConfigError::Invalid("listen must not be empty".into()));
        }
        Ok(())
    }
}
