//! Flat `key = value` service configuration with `PS_*` environment
//! overrides.
//!
//! ```text
//! # comments start with '#'
//! listen = 127.0.0.1:8080
//! data_dir = ./data
//! recompute_interval = 30
//! ```

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::engine::{EngineConfig, DEFAULT_RECOMPUTE_INTERVAL};
use crate::store::{SyncMode, DEFAULT_SEGMENT_LEN};

pub const ENV_PREFIX: &str = "PS_";

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub data_dir: PathBuf,
    pub recompute_interval: Duration,
    pub segment_len: u64,
    pub sync: SyncMode,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: PathBuf::from("data"),
            recompute_interval: DEFAULT_RECOMPUTE_INTERVAL,
            segment_len: DEFAULT_SEGMENT_LEN,
            sync: SyncMode::Flush,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("invalid value for {key}: {message}")]
    Value { key: String, message: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
}

impl ServiceConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |message: String| ConfigError::Value {
            key: key.to_string(),
            message,
        };
        match key {
            "listen" => self.listen = value.parse().map_err(|e| bad(format!("{e}")))?,
            "data_dir" => self.data_dir = PathBuf::from(value),
            "recompute_interval" => {
                let secs: f64 = value.parse().map_err(|e| bad(format!("{e}")))?;
                if !(secs > 0.0) || !secs.is_finite() {
                    return Err(bad("must be a positive number of seconds".into()));
                }
                self.recompute_interval = Duration::from_secs_f64(secs);
            }
            "segment_len" => {
                self.segment_len = value.parse().map_err(|e| bad(format!("{e}")))?;
                if self.segment_len == 0 {
                    return Err(bad("must be positive".into()));
                }
            }
            "sync" => {
                self.sync = match value {
                    "flush" => SyncMode::Flush,
                    "fsync" => SyncMode::Fsync,
                    _ => return Err(bad("expected flush or fsync".into())),
                }
            }
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ServiceConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                message: "expected key = value".into(),
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    /// Apply `PS_<KEY>` overrides from `vars`.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), ConfigError> {
        for (k, v) in vars {
            if let Some(key) = k.strip_prefix(ENV_PREFIX) {
                self.set(&key.to_ascii_lowercase(), &v)?;
            }
        }
        Ok(())
    }

    /// Read `path` (defaults when `None`) and apply process environment
    /// overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => ServiceConfig::parse(&std::fs::read_to_string(p)?)?,
            None => ServiceConfig::default(),
        };
        cfg.apply_env(std::env::vars())?;
        Ok(cfg)
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            data_dir: Some(self.data_dir.clone()),
            segment_len: self.segment_len,
            sync: self.sync,
            recompute_interval: self.recompute_interval,
        }
    }
}
