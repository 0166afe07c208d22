//! Campaign configuration: target endpoints, timeouts and schedules.
//!
//! Configs live in a JSON file so a campaign is a checked-in artifact;
//! command-line flags override individual fields.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::testcase::ScheduleConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Where to inject and how long to wait.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TargetConfig {
    pub host: String,
    pub port: u16,
    pub monitor_host: String,
    pub monitor_port: u16,
    /// Wait for a reply line (banner, prefix replies, probe connects).
    pub response_timeout_ms: u64,
    /// Total wait on the mutated message before declaring a hang.
    pub hang_timeout_ms: u64,
    /// Pause after a restart before the next test case.
    pub settle_delay_ms: u64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        TargetConfig {
            host: "127.0.0.1".into(),
            port: 2121,
            monitor_host: "127.0.0.1".into(),
            monitor_port: 9911,
            response_timeout_ms: 2000,
            hang_timeout_ms: 10_000,
            settle_delay_ms: 200,
        }
    }
}

impl TargetConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.response_timeout_ms == 0 || self.hang_timeout_ms == 0 || self.settle_delay_ms == 0 {
            return Err(ConfigError::Invalid("timeouts must be positive".into()));
        }
        if self.hang_timeout_ms < self.response_timeout_ms {
            return Err(ConfigError::Invalid(format!(
                "hang_timeout_ms {} must be >= response_timeout_ms {}",
                self.hang_timeout_ms, self.response_timeout_ms
            )));
        }
        Ok(())
    }
}

/// Everything a `fuzz` run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignConfig {
    pub pcap_path: PathBuf,
    pub target: TargetConfig,
    pub schedules: ScheduleConfig,
    pub output_dir: PathBuf,
    pub resume: bool,
    /// Restart the target after every test case, not just after findings.
    pub restart_every_case: bool,
    /// Optional test-id filter, e.g. to reproduce a single finding.
    pub test_ids: Option<Vec<usize>>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            pcap_path: PathBuf::new(),
            target: TargetConfig::default(),
            schedules: ScheduleConfig::default(),
            output_dir: PathBuf::from("out"),
            resume: false,
            restart_every_case: false,
            test_ids: None,
        }
    }
}

impl CampaignConfig {
    pub fn load(path: &Path) -> Result<CampaignConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.pcap_path.as_os_str().is_empty() {
            return Err(ConfigError::Invalid("pcap_path is required".into()));
        }
        self.target.validate()
    }
}
