//! Module defaults, layered: built-in file, then `EDGESWARM_CONFIG`, then
//! per-scenario overrides. Layers merge as JSON objects, key by key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::device::{BatteryModel, SensorConfig};
use crate::lifecycle::LifecycleConfig;
use crate::network::{LinkModel, P2pConfig};
use crate::registry::{Catalog, RegistryConfig};

pub const CONFIG_ENV: &str = "EDGESWARM_CONFIG";

const DEFAULTS_JSON: &str = include_str!("../config/defaults.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadDefaults {
    pub acceptable_latency_s: f64,
    /// Image size uploaded per remote classification.
    pub payload_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    /// Motion, sensor and battery tick.
    pub tick_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub link: LinkModel,
    pub p2p: P2pConfig,
    pub registry: RegistryConfig,
    pub lifecycle: LifecycleConfig,
    pub battery: BatteryModel,
    pub sensors: SensorConfig,
    pub workload: WorkloadDefaults,
    pub world: WorldConfig,
    pub catalog: Catalog,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {origin}: {source}")]
    Parse {
        origin: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl Default for Config {
    fn default() -> Self {
        serde_json::from_str(DEFAULTS_JSON).expect("built-in defaults parse")
    }
}

impl Config {
    pub fn defaults_value() -> Value {
        serde_json::from_str(DEFAULTS_JSON).expect("built-in defaults parse")
    }

    /// Built-in defaults with each layer merged on top, in order.
    pub fn layered<'a>(layers: impl IntoIterator<Item = &'a Value>) -> Result<Config, ConfigError> {
        let mut v = Self::defaults_value();
        for layer in layers {
            merge_json(&mut v, layer);
        }
        Self::from_value(v)
    }

    pub fn from_value(v: Value) -> Result<Config, ConfigError> {
        let cfg: Config = serde_json::from_value(v).map_err(|source| ConfigError::Parse {
            origin: "config".into(),
            source,
        })?;
        cfg.validate().map_err(ConfigError::Invalid)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.link.validate().map_err(|e| format!("link.{e}"))?;
        self.p2p.validate()?;
        self.registry.validate()?;
        self.lifecycle.validate()?;
        self.battery.validate()?;
        self.sensors.validate()?;
        self.catalog.validate()?;
        if !(self.workload.acceptable_latency_s > 0.0) {
            return Err("workload.acceptable_latency_s must be > 0".into());
        }
        if !(self.world.tick_s > 0.0) {
            return Err("world.tick_s must be > 0".into());
        }
        Ok(())
    }
}

/// Reads a JSON override file.
pub fn read_override(path: &Path) -> Result<Value, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_owned(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
        origin: path.display().to_string(),
        source,
    })
}

/// The override named by `EDGESWARM_CONFIG`, if set.
pub fn env_override() -> Result<Option<Value>, ConfigError> {
    match std::env::var_os(CONFIG_ENV) {
        Some(p) if !p.is_empty() => read_override(Path::new(&p)).map(Some),
        _ => Ok(None),
    }
}

/// Objects merge recursively; any other value replaces.
pub fn merge_json(base: &mut Value, overlay: &Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}
