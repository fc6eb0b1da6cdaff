//! Engine configuration, read from TOML.
//!
//! ```toml
//! data_dir = "drape-data"
//!
//! [server]
//! bind = "127.0.0.1:8080"
//!
//! [session]
//! min_image_side = 256
//!
//! [planner]
//! seed = 7
//!
//! [gateway]
//! backends = [{ capability = "chat", mode = "remote", endpoint = "http://localhost:9000" }]
//! ```
//!
//! Capabilities missing from `gateway.backends` run in mock mode.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendDescriptor, Capability, GatewayConfig, GatewaySettings};
use crate::planner::PlannerConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    /// Uploads whose shorter side is below this are rejected.
    pub min_image_side: u32,
    /// Send messages that are neither edits nor capability questions to
    /// the chat backend. Off: such messages get a fixed reply.
    pub free_chat: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            min_image_side: 256,
            free_chat: false,
        }
    }
}

/// Gateway section; unlike [`GatewayConfig`] every capability is optional.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySection {
    pub backends: Vec<BackendDescriptor>,
    pub settings: GatewaySettings,
    pub mock_scenario: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Blob store, session logs and the job log live here.
    pub data_dir: PathBuf,
    pub server: ServerConfig,
    pub session: SessionConfig,
    pub planner: PlannerConfig,
    pub gateway: GatewaySection,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("drape-data"),
            server: ServerConfig::default(),
            session: SessionConfig::default(),
            planner: PlannerConfig::default(),
            gateway: GatewaySection::default(),
        }
    }
}

impl EngineConfig {
    /// Defaults with every backend mocked, rooted at `data_dir`.
    pub fn mock(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            ..Self::default()
        }
    }

    pub fn from_toml(src: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(src)?;
        cfg.gateway_config().validate().map_err(ConfigError::Invalid)?;
        Ok(cfg)
    }

    /// Reads the file; a relative `data_dir` or `mock_scenario` is taken
    /// relative to the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let src = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml(&src)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.data_dir.is_relative() {
            cfg.data_dir = base.join(&cfg.data_dir);
        }
        if let Some(s) = cfg.gateway.mock_scenario.as_mut().filter(|s| s.is_relative()) {
            *s = base.join(&*s);
        }
        Ok(cfg)
    }

    /// Full gateway config: listed descriptors plus mocks for the rest,
    /// with `DRAPE_<CAP>_ENDPOINT` environment overrides applied.
    pub fn gateway_config(&self) -> GatewayConfig {
        let mut backends = self.gateway.backends.clone();
        for cap in Capability::ALL {
            if !backends.iter().any(|d| d.capability == cap) {
                backends.push(BackendDescriptor::mock(cap));
            }
        }
        let mut cfg = GatewayConfig {
            backends,
            settings: self.gateway.settings.clone(),
            mock_scenario: self.gateway.mock_scenario.clone(),
        };
        cfg.apply_env(|k| std::env::var(k).ok());
        cfg
    }

    pub fn store_dir(&self) -> PathBuf {
        self.data_dir.join("store")
    }

    pub fn sessions_dir(&self) -> PathBuf {
        self.data_dir.join("sessions")
    }

    pub fn job_log(&self) -> PathBuf {
        self.data_dir.join("jobs.jsonl")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Mode;

    #[test]
    fn minimal_file_is_all_mock() {
        let cfg = EngineConfig::from_toml("data_dir = \"x\"").unwrap();
        let gw = cfg.gateway_config();
        assert_eq!(gw.backends.len(), Capability::ALL.len());
        assert!(gw.backends.iter().all(|d| d.mode == Mode::Mock || std::env::var(d.capability.endpoint_env_var()).is_ok()));
        assert_eq!(cfg.session.min_image_side, 256);
    }

    #[test]
    fn sections_parse() {
        let cfg = EngineConfig::from_toml(
            r#"
            [server]
            bind = "0.0.0.0:9"
            [planner]
            seed = 7
            use_language_model = false
            [planner.automask]
            dilation_radius = 4
            [gateway]
            backends = [{ capability = "chat", mode = "remote", endpoint = "http://h:1", max_retries = 0 }]
            [gateway.settings]
            inflight_cap = 2
            "#,
        )
        .unwrap();
        assert_eq!(cfg.server.bind, "0.0.0.0:9");
        assert_eq!(cfg.planner.seed, Some(7));
        assert_eq!(cfg.planner.automask.dilation_radius, Some(4));
        let chat = cfg.gateway_config().backends.into_iter().find(|d| d.capability == Capability::Chat).unwrap();
        assert_eq!(chat.endpoint, "http://h:1");
        assert_eq!(cfg.gateway.settings.inflight_cap, 2);
    }

    #[test]
    fn invalid_config_is_rejected() {
        assert!(EngineConfig::from_toml("bogus = 1").is_err());
        assert!(EngineConfig::from_toml(
            "[gateway]\nbackends = [{ capability = \"chat\", mode = \"remote\" }]"
        )
        .is_err());
    }
}
