//! Server configuration: a `key = value` file with `GS_*` environment
//! overrides.
//!
//! ```text
//! # geosafe.conf
//! port = 8080
//! db_path = /var/lib/geosafe
//! safe_distance_m = 1.8
//! noise_m = 0.2
//! notify_buffer_m = 100
//! cell_size_deg = 0.001
//! zone_ttl_days = 14
//! operator = dghs:Government:change-me
//! ```

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use chrono::Duration;
use thiserror::Error;

use crate::geo::ZoneParameters;
use crate::index::DEFAULT_CELL_SIZE_DEG;
use crate::store::{Role, StoreOptions};

pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown configuration key {0:?}")]
    UnknownKey(String),
    #[error("invalid value {value:?} for {key}")]
    Value { key: String, value: String },
}

/// An operator account created at startup if it does not exist yet.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSeed {
    pub name: String,
    pub role: Role,
    pub password: String,
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub port: u16,
    /// Registry directory; `None` keeps everything in memory.
    pub db_path: Option<PathBuf>,
    pub params: ZoneParameters,
    pub cell_size_deg: f64,
    pub store: StoreOptions,
    pub operators: Vec<OperatorSeed>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            port: DEFAULT_PORT,
            db_path: None,
            params: ZoneParameters::default(),
            cell_size_deg: DEFAULT_CELL_SIZE_DEG,
            store: StoreOptions::default(),
            operators: Vec::new(),
        }
    }
}

const ENV_KEYS: [(&str, &str); 7] = [
    ("GS_PORT", "port"),
    ("GS_DB_PATH", "db_path"),
    ("GS_SAFE_DISTANCE_M", "safe_distance_m"),
    ("GS_NOISE_M", "noise_m"),
    ("GS_NOTIFY_BUFFER_M", "notify_buffer_m"),
    ("GS_CELL_SIZE_DEG", "cell_size_deg"),
    ("GS_ZONE_TTL_DAYS", "zone_ttl_days"),
];

impl ServiceConfig {
    /// Reads `path` (if given), then applies environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                path: p.to_path_buf(),
                source,
            })?,
            None => String::new(),
        };
        let env: HashMap<String, String> = std::env::vars().collect();
        Self::from_sources(&text, &env)
    }

    pub fn from_sources(text: &str, env: &HashMap<String, String>) -> Result<Self, ConfigError> {
        let mut cfg = ServiceConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            cfg.set(key.trim(), value.trim())?;
        }
        for (var, key) in ENV_KEYS {
            if let Some(value) = env.get(var) {
                cfg.set(key, value.trim())?;
            }
        }
        cfg.params.validate().map_err(|e| ConfigError::Value {
            key: "zone parameters".into(),
            value: e.to_string(),
        })?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::Value {
            key: key.to_string(),
            value: value.to_string(),
        };
        let float = || value.parse::<f64>().map_err(|_| bad());
        match key {
            "port" => self.port = value.parse().map_err(|_| bad())?,
            "db_path" => self.db_path = (!value.is_empty()).then(|| PathBuf::from(value)),
            "safe_distance_m" => self.params.safe_distance_m = float()?,
            "noise_m" => self.params.noise_m = float()?,
            "notify_buffer_m" => self.params.notify_buffer_m = float()?,
            "cell_size_deg" => {
                let v = float()?;
                if !(v > 0.0 && v <= 1.0) {
                    return Err(bad());
                }
                self.cell_size_deg = v;
            }
            "zone_ttl_days" => {
                let days: i64 = value.parse().map_err(|_| bad())?;
                if days <= 0 {
                    return Err(bad());
                }
                self.params.zone_ttl = Duration::days(days);
            }
            "snapshot_every" => {
                let n: u64 = value.parse().map_err(|_| bad())?;
                self.store.snapshot_every = (n > 0).then_some(n);
            }
            "fsync" => self.store.sync = value.parse().map_err(|_| bad())?,
            "operator" => {
                let mut parts = value.splitn(3, ':');
                let (Some(name), Some(role), Some(password)) = (parts.next(), parts.next(), parts.next()) else {
                    return Err(bad());
                };
                let role: Role = role.parse().map_err(|_| bad())?;
                if role == Role::User || name.is_empty() || password.is_empty() {
                    return Err(bad());
                }
                self.operators.push(OperatorSeed {
                    name: name.to_string(),
                    role,
                    password: password.to_string(),
                });
            }
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }
}
