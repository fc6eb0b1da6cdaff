use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::Capability;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Remote,
    #[default]
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub struct BackendDescriptor {
    pub capability: Capability,
    /// Base URL; requests go to `{endpoint}/v1/{route}`.
    #[serde(default)]
    pub endpoint: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub mode: Mode,
}

fn default_timeout() -> f64 {
    60.0
}

fn default_retries() -> u32 {
    2
}

impl BackendDescriptor {
    pub fn mock(capability: Capability) -> Self {
        Self {
            capability,
            endpoint: String::new(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            mode: Mode::Mock,
        }
    }

    pub fn remote(capability: Capability, endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            mode: Mode::Remote,
            ..Self::mock(capability)
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err(format!("{}: timeout must be positive", self.capability));
        }
        if self.mode == Mode::Remote && self.endpoint.trim().is_empty() {
            return Err(format!("{}: remote mode needs an endpoint", self.capability));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewaySettings {
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    /// Requests whose images exceed this many base64 bytes go multipart.
    pub inline_limit_bytes: usize,
    /// Per-capability in-flight request cap.
    pub inflight_cap: usize,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        Self {
            backoff_base_ms: 200,
            backoff_max_ms: 5_000,
            inline_limit_bytes: 4 * 1024 * 1024,
            inflight_cap: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub backends: Vec<BackendDescriptor>,
    #[serde(default)]
    pub settings: GatewaySettings,
    /// Scenario file for mock-mode capabilities; the built-in synthetic
    /// scenario is used when absent.
    #[serde(default)]
    pub mock_scenario: Option<PathBuf>,
}

impl GatewayConfig {
    /// Every capability in mock mode.
    pub fn all_mock() -> Self {
        Self {
            backends: Capability::ALL.into_iter().map(BackendDescriptor::mock).collect(),
            settings: GatewaySettings::default(),
            mock_scenario: None,
        }
    }

    /// Each capability must be configured exactly once.
    pub fn validate(&self) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for d in &self.backends {
            d.validate()?;
            if !seen.insert(d.capability) {
                return Err(format!("{} configured more than once", d.capability));
            }
        }
        if let Some(missing) = Capability::ALL.iter().find(|c| !seen.contains(c)) {
            return Err(format!("{missing} is not configured"));
        }
        if self.settings.inflight_cap == 0 {
            return Err("inflight_cap must be at least 1".into());
        }
        Ok(())
    }

    /// Applies `DRAPE_<CAP>_ENDPOINT` overrides: a set variable switches
    /// that capability to remote mode at the given URL.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        for d in &mut self.backends {
            if let Some(url) = get(&d.capability.endpoint_env_var()).filter(|u| !u.trim().is_empty()) {
                d.endpoint = url;
                d.mode = Mode::Remote;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exactly_once_per_capability() {
        let mut cfg = GatewayConfig::all_mock();
        assert!(cfg.validate().is_ok());
        cfg.backends.push(BackendDescriptor::mock(Capability::Chat));
        assert!(cfg.validate().unwrap_err().contains("more than once"));
        cfg.backends.retain(|d| d.capability != Capability::Edge);
        cfg.backends.pop();
        assert!(cfg.validate().unwrap_err().contains("edge"));
    }

    #[test]
    fn descriptor_invariants() {
        let mut d = BackendDescriptor::mock(Capability::Chat);
        d.timeout_secs = 0.0;
        assert!(d.validate().is_err());
        assert!(BackendDescriptor::remote(Capability::Chat, "").validate().is_err());
    }

    #[test]
    fn env_override_switches_to_remote() {
        let mut cfg = GatewayConfig::all_mock();
        cfg.apply_env(|k| (k == "DRAPE_VQA_ENDPOINT").then(|| "http://vqa:9000".to_string()));
        let vqa = cfg.backends.iter().find(|d| d.capability == Capability::Vqa).unwrap();
        assert_eq!(vqa.mode, Mode::Remote);
        assert_eq!(vqa.endpoint, "http://vqa:9000");
    }
}
