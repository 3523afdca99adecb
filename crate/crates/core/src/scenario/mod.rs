//! Scenario files: topology, indoor regions, devices with waypoint scripts,
//! workloads, outages and config overrides. See `docs/scenario-schema.md`.

mod workload;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use workload::{arrival_times, generate_tasks, Arrival, WorkloadSpec};

use crate::config::{env_override, Config, ConfigError};
use crate::device::BatteryModel;
use crate::geometry::Rect;
use crate::network::{ingest_topology, CellTower, TopologyError};
use crate::registry::{ArchMode, Capability, Catalog};
use crate::Point;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub t_s: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Building {
    pub building_id: String,
    pub min: Point,
    pub max: Point,
}

impl Building {
    pub fn rect(&self) -> Rect<f64> {
        Rect::new(self.min, self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PreinstalledState {
    Dormant,
    Active,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preinstalled {
    pub agent_id: String,
    pub state: PreinstalledState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub device_id: String,
    #[serde(default = "full_battery")]
    pub battery_pct: f64,
    pub memory_capacity_bytes: u64,
    #[serde(default = "yes")]
    pub credential: bool,
    /// Ground-truth route; the device sits at the first point until its time.
    pub waypoints: Vec<Waypoint>,
    #[serde(default)]
    pub preinstalled: Vec<Preinstalled>,
    /// Extra capabilities deployed at provisioning time (agent mode) and left dormant until used.
    #[serde(default)]
    pub provision: Vec<Capability>,
    /// Per-device battery calibration; the config default when absent.
    #[serde(default)]
    pub battery_model: Option<BatteryModel>,
}

fn full_battery() -> f64 {
    100.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outage {
    pub start_s: f64,
    pub end_s: f64,
}

impl Outage {
    pub fn covers(&self, t_s: f64) -> bool {
        t_s >= self.start_s && t_s < self.end_s
    }
}

/// On-disk layout. Optional fields resolve against config defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    schema_version: u32,
    scenario_id: String,
    duration_s: f64,
    arch_mode: ArchMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    towers: Option<Vec<CellTower>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    towers_csv: Option<String>,
    #[serde(default)]
    buildings: Vec<Building>,
    devices: Vec<DeviceSpec>,
    #[serde(default)]
    workload: Vec<WorkloadSpec>,
    #[serde(default)]
    outages: Vec<Outage>,
    #[serde(default)]
    deploy_at_s: Option<f64>,
    #[serde(default)]
    end_of_emergency_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    catalog: Option<Catalog>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<Value>,
}

/// A loaded scenario with every default resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub scenario_id: String,
    pub duration_s: f64,
    pub arch_mode: ArchMode,
    pub towers: Vec<CellTower>,
    pub buildings: Vec<Building>,
    pub devices: Vec<DeviceSpec>,
    pub workload: Vec<WorkloadSpec>,
    pub outages: Vec<Outage>,
    /// When devices provision their capabilities.
    pub deploy_at_s: f64,
    /// Final apoptosis sweep.
    pub end_of_emergency_s: f64,
    pub config: Config,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{path}: {message}")]
    Validation { path: String, message: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("towers_csv: {0}")]
    Topology(#[from] TopologyError),
}

impl ScenarioError {
    fn at(path: impl Into<String>, message: impl Into<String>) -> Self {
        ScenarioError::Validation {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl Scenario {
    pub fn is_indoor(&self, p: Point) -> bool {
        self.buildings.iter().any(|b| b.rect().contains(p))
    }

    pub fn cellular_outage_at(&self, t_s: f64) -> bool {
        self.outages.iter().any(|o| o.covers(t_s))
    }

    pub fn device(&self, device_id: &str) -> Option<&DeviceSpec> {
        self.devices.iter().find(|d| d.device_id == device_id)
    }

    pub fn with_arch(mut self, arch_mode: ArchMode) -> Self {
        self.arch_mode = arch_mode;
        self
    }

    pub fn catalog(&self) -> &Catalog {
        &self.config.catalog
    }
}

/// Loads a scenario file, applying `EDGESWARM_CONFIG` beneath its overrides.
pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_owned(),
        source,
    })?;
    let env = env_override()?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_scenario(&text, base, env.as_ref())
}

/// Parses scenario JSON. `base_dir` resolves `towers_csv`; `env_layer` sits
/// between the built-in defaults and the scenario's own `config`.
pub fn parse_scenario(text: &str, base_dir: &Path, env_layer: Option<&Value>) -> Result<Scenario, ScenarioError> {
    let file: ScenarioFile = serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    resolve(file, base_dir, env_layer)
}

fn resolve(file: ScenarioFile, base_dir: &Path, env_layer: Option<&Value>) -> Result<Scenario, ScenarioError> {
    if file.schema_version != SCHEMA_VERSION {
        return Err(ScenarioError::at(
            "schema_version",
            format!("unsupported version {} (expected {SCHEMA_VERSION})", file.schema_version),
        ));
    }
    let mut overrides = file.config.unwrap_or(Value::Object(Default::default()));
    let Value::Object(map) = &mut overrides else {
        return Err(ScenarioError::at("config", "must be an object"));
    };
    if let Some(cat) = &file.catalog {
        map.insert("catalog".into(), serde_json::to_value(cat).expect("catalog serializes"));
    }
    let layers: Vec<&Value> = env_layer.into_iter().chain(std::iter::once(&overrides)).collect();
    let config = Config::layered(layers).map_err(|e| match e {
        ConfigError::Invalid(m) => ScenarioError::at("config", m),
        ConfigError::Parse { source, .. } => ScenarioError::at("config", source.to_string()),
        other => ScenarioError::Config(other),
    })?;

    let towers = match (file.towers, file.towers_csv) {
        (Some(_), Some(_)) => return Err(ScenarioError::at("towers", "give either towers or towers_csv, not both")),
        (Some(t), None) => t,
        (None, Some(csv)) => {
            let p = base_dir.join(&csv);
            let f = std::fs::File::open(&p).map_err(|source| ScenarioError::Io { path: p.clone(), source })?;
            let topo = ingest_topology(f)?;
            if let Some(bad) = topo.row_errors.first() {
                return Err(ScenarioError::at(format!("towers_csv:{}", bad.line), bad.message.clone()));
            }
            topo.towers
        }
        (None, None) => Vec::new(),
    };

    let mut workload = file.workload;
    for w in &mut workload {
        w.acceptable_latency_s.get_or_insert(config.workload.acceptable_latency_s);
        w.payload_bytes.get_or_insert(config.workload.payload_bytes);
    }
    let s = Scenario {
        end_of_emergency_s: file.end_of_emergency_s.unwrap_or(file.duration_s),
        deploy_at_s: file.deploy_at_s.unwrap_or(0.0),
        scenario_id: file.scenario_id,
        duration_s: file.duration_s,
        arch_mode: file.arch_mode,
        towers,
        buildings: file.buildings,
        devices: file.devices,
        workload,
        outages: file.outages,
        config,
    };
    validate(&s)?;
    Ok(s)
}

/// Checks every scenario invariant, reporting the first violation with its
/// field path.
pub fn validate(s: &Scenario) -> Result<(), ScenarioError> {
    if s.scenario_id.trim().is_empty() {
        return Err(ScenarioError::at("scenario_id", "must not be empty"));
    }
    if !(s.duration_s > 0.0 && s.duration_s.is_finite()) {
        return Err(ScenarioError::at("duration_s", "must be > 0"));
    }
    let in_run = |t: f64| (0.0..=s.duration_s).contains(&t);
    if !in_run(s.deploy_at_s) {
        return Err(ScenarioError::at("deploy_at_s", "must lie within [0, duration_s]"));
    }
    if !in_run(s.end_of_emergency_s) {
        return Err(ScenarioError::at("end_of_emergency_s", "must lie within [0, duration_s]"));
    }
    let mut tower_ids = BTreeSet::new();
    for (i, t) in s.towers.iter().enumerate() {
        t.validate().map_err(|m| ScenarioError::at(format!("towers[{i}]"), m))?;
        if !tower_ids.insert(t.tower_id.as_str()) {
            return Err(ScenarioError::at(format!("towers[{i}].tower_id"), format!("duplicate id `{}`", t.tower_id)));
        }
    }
    for (i, b) in s.buildings.iter().enumerate() {
        if !b.rect().is_well_formed() {
            return Err(ScenarioError::at(format!("buildings[{i}]"), "min must not exceed max"));
        }
    }
    if s.devices.is_empty() {
        return Err(ScenarioError::at("devices", "at least one device is required"));
    }
    let mut device_ids = BTreeSet::new();
    for (i, d) in s.devices.iter().enumerate() {
        let at = format!("devices[{i}]");
        if d.device_id.trim().is_empty() {
            return Err(ScenarioError::at(format!("{at}.device_id"), "must not be empty"));
        }
        if !device_ids.insert(d.device_id.as_str()) {
            return Err(ScenarioError::at(format!("{at}.device_id"), format!("duplicate id `{}`", d.device_id)));
        }
        if !(0.0..=100.0).contains(&d.battery_pct) {
            return Err(ScenarioError::at(format!("{at}.battery_pct"), "must be in [0, 100]"));
        }
        if d.waypoints.is_empty() {
            return Err(ScenarioError::at(format!("{at}.waypoints"), "at least one waypoint is required"));
        }
        for (j, w) in d.waypoints.iter().enumerate() {
            let wat = format!("{at}.waypoints[{j}]");
            if !in_run(w.t_s) {
                return Err(ScenarioError::at(
                    format!("{wat}.t_s"),
                    format!("{} is outside [0, {}]", w.t_s, s.duration_s),
                ));
            }
            if j > 0 && w.t_s <= d.waypoints[j - 1].t_s {
                return Err(ScenarioError::at(format!("{wat}.t_s"), "waypoint times must strictly increase"));
            }
            if !(w.x.is_finite() && w.y.is_finite()) {
                return Err(ScenarioError::at(wat, "coordinates must be finite"));
            }
        }
        let mut installed = 0u64;
        for (j, p) in d.preinstalled.iter().enumerate() {
            let m = s
                .catalog()
                .agent(&p.agent_id)
                .ok_or_else(|| ScenarioError::at(format!("{at}.preinstalled[{j}].agent_id"), format!("unknown agent `{}`", p.agent_id)))?;
            installed += m.memory_footprint_bytes;
        }
        if installed > d.memory_capacity_bytes {
            return Err(ScenarioError::at(format!("{at}.preinstalled"), "footprints exceed memory_capacity_bytes"));
        }
        if let Some(bm) = &d.battery_model {
            bm.validate().map_err(|m| ScenarioError::at(format!("{at}.battery_model"), m))?;
        }
    }
    for (i, w) in s.workload.iter().enumerate() {
        let at = format!("workload[{i}]");
        if !device_ids.contains(w.device_id.as_str()) {
            return Err(ScenarioError::at(format!("{at}.device_id"), format!("unknown device `{}`", w.device_id)));
        }
        w.validate(&at, s.duration_s).map_err(|(p, m)| ScenarioError::at(p, m))?;
    }
    for (i, o) in s.outages.iter().enumerate() {
        if !(o.start_s >= 0.0 && o.start_s < o.end_s) {
            return Err(ScenarioError::at(format!("outages[{i}]"), "need 0 <= start_s < end_s"));
        }
    }
    Ok(())
}

/// Serializes the fully resolved scenario: towers inline and the complete
/// config, so that loading the output reproduces `s` under any environment.
pub fn emit_scenario(s: &Scenario) -> String {
    let file = ScenarioFile {
        schema_version: SCHEMA_VERSION,
        scenario_id: s.scenario_id.clone(),
        duration_s: s.duration_s,
        arch_mode: s.arch_mode,
        towers: Some(s.towers.clone()),
        towers_csv: None,
        buildings: s.buildings.clone(),
        devices: s.devices.clone(),
        workload: s.workload.clone(),
        outages: s.outages.clone(),
        deploy_at_s: Some(s.deploy_at_s),
        end_of_emergency_s: Some(s.end_of_emergency_s),
        catalog: None,
        config: Some(serde_json::to_value(&s.config).expect("config serializes")),
    };
    let mut out = serde_json::to_string_pretty(&file).expect("scenario serializes");
    out.push('\n');
    out
}

/// Ground-truth position on a waypoint script, linear between points and
/// held constant before the first and after the last.
pub fn position_at(waypoints: &[Waypoint], t_s: f64) -> Point {
    let first = waypoints.first().expect("validated scenarios have waypoints");
    if t_s <= first.t_s {
        return Point::new(first.x, first.y);
    }
    for w in waypoints.windows(2) {
        let (a, b) = (w[0], w[1]);
        if t_s <= b.t_s {
            let frac = (t_s - a.t_s) / (b.t_s - a.t_s);
            return Point::new(a.x, a.y).lerp(Point::new(b.x, b.y), frac);
        }
    }
    let last = waypoints.last().expect("non-empty");
    Point::new(last.x, last.y)
}
