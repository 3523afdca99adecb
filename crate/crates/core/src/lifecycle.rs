//! Agent lifecycle: dormancy, activation, sensor-driven pause, autonomous
//! replacement and expiry followed by self-uninstall.
//!
//! ```text
//! Requested -> Deploying -> Dormant -> Active <-> Paused
//!                  |           \         |        /
//!                  |            +---> Expired <--+
//!                  v                     |
//!             Uninstalled <--------------+
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{DeviceError, DeviceState, GpsFix};
use crate::engine::{SimTime, UniformSource};
use crate::registry::{
    deploy_protocol, discover, plan_bundle, AgentManifest, ArchMode, Capability, Catalog, DeployExchange, DeploymentRecord,
    DiscoverQuery, Discovery, DiscoveryError, LinkProvider, ModelClass, PlanError, RegistryConfig, ServiceOffering,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LifecycleState {
    Requested,
    Deploying,
    Dormant,
    Active,
    Paused,
    Expired,
    Uninstalled,
}

impl LifecycleState {
    pub const ALL: [LifecycleState; 7] = [
        LifecycleState::Requested,
        LifecycleState::Deploying,
        LifecycleState::Dormant,
        LifecycleState::Active,
        LifecycleState::Paused,
        LifecycleState::Expired,
        LifecycleState::Uninstalled,
    ];

    /// States whose footprint counts against device memory.
    pub fn holds_memory(self) -> bool {
        matches!(
            self,
            LifecycleState::Deploying
                | LifecycleState::Dormant
                | LifecycleState::Active
                | LifecycleState::Paused
                | LifecycleState::Expired
        )
    }
}

impl fmt::Display for LifecycleState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok();
        f.write_str(s.as_ref().and_then(|v| v.as_str()).unwrap_or("?"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LifecycleEvent {
    Deploy,
    Installed,
    TransferFailed,
    Activate,
    Pause,
    Resume,
    Expire,
    Uninstall,
}

impl LifecycleEvent {
    pub const ALL: [LifecycleEvent; 8] = [
        LifecycleEvent::Deploy,
        LifecycleEvent::Installed,
        LifecycleEvent::TransferFailed,
        LifecycleEvent::Activate,
        LifecycleEvent::Pause,
        LifecycleEvent::Resume,
        LifecycleEvent::Expire,
        LifecycleEvent::Uninstall,
    ];
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("illegal lifecycle transition: {from:?} on {event:?}")]
pub struct IllegalTransition {
    pub from: LifecycleState,
    pub event: LifecycleEvent,
}

/// The transition table.
pub fn next_state(from: LifecycleState, event: LifecycleEvent) -> Result<LifecycleState, IllegalTransition> {
    use LifecycleEvent as E;
    use LifecycleState as S;
    match (from, event) {
        (S::Requested, E::Deploy) => Ok(S::Deploying),
        (S::Deploying, E::Installed) => Ok(S::Dormant),
        (S::Deploying, E::TransferFailed) => Ok(S::Uninstalled),
        (S::Dormant, E::Activate) => Ok(S::Active),
        (S::Active, E::Pause) => Ok(S::Paused),
        (S::Paused, E::Resume) => Ok(S::Active),
        (S::Active | S::Paused | S::Dormant, E::Expire) => Ok(S::Expired),
        (S::Expired, E::Uninstall) => Ok(S::Uninstalled),
        _ => Err(IllegalTransition { from, event }),
    }
}

/// One applied transition, as it appears in the event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub agent_id: String,
    pub from: LifecycleState,
    pub to: LifecycleState,
    pub reason: String,
}

// ------------------------------------------------------------ sensor monitor

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifecycleConfig {
    /// Consecutive bad readings before an agent declares its sensor degraded.
    pub n_bad: u32,
    /// GPS fixes with a larger error estimate are bad.
    pub gps_error_max_m: f64,
    pub sweep_period_s: f64,
}

impl LifecycleConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_bad == 0 {
            return Err("lifecycle.n_bad must be >= 1".into());
        }
        if !(self.gps_error_max_m > 0.0) {
            return Err("lifecycle.gps_error_max_m must be > 0".into());
        }
        if !(self.sweep_period_s > 0.0) {
            return Err("lifecycle.sweep_period_s must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Ok,
    Degraded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorQualityVerdict {
    pub verdict: Verdict,
    pub consecutive_bad: u32,
    /// Error estimate of the newest reading, meters.
    pub metric: f64,
}

pub fn is_bad_fix(fix: &GpsFix, cfg: &LifecycleConfig) -> bool {
    fix.error_estimate_m > cfg.gps_error_max_m
}

/// Judges a GPS agent's trailing window of fixes: degraded once the last
/// `n_bad` fixes are all bad.
pub fn monitor_sensor(readings: &[GpsFix], cfg: &LifecycleConfig) -> SensorQualityVerdict {
    let consecutive_bad = readings.iter().rev().take_while(|f| is_bad_fix(f, cfg)).count() as u32;
    SensorQualityVerdict {
        verdict: if consecutive_bad >= cfg.n_bad {
            Verdict::Degraded
        } else {
            Verdict::Ok
        },
        consecutive_bad,
        metric: readings.last().map_or(0.0, |f| f.error_estimate_m),
    }
}

// --------------------------------------------------------------- replacement

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplacementRequest {
    pub requesting_agent_id: String,
    pub device_id: String,
    pub desired_capability: Capability,
    /// Model classes the replacement must not use.
    pub exclude_model_classes: Vec<ModelClass>,
    pub reason: String,
    pub user_interaction: bool,
}

impl ReplacementRequest {
    /// Request raised by a GPS agent whose fixes went bad.
    pub fn for_degraded_gps(agent_id: &str, device_id: &str) -> Self {
        ReplacementRequest {
            requesting_agent_id: agent_id.to_owned(),
            device_id: device_id.to_owned(),
            desired_capability: Capability::Localization,
            exclude_model_classes: vec![ModelClass::GpsLoc],
            reason: "gps-degraded".into(),
            user_interaction: false,
        }
    }

    pub fn allows(&self, m: &AgentManifest) -> bool {
        m.capability == self.desired_capability && !self.exclude_model_classes.contains(&m.model_class)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplacementError {
    #[error("replacement requests must not involve the user")]
    UserInteraction,
    #[error("requesting agent `{0}` is neither active nor paused")]
    RequesterNotRunning(String),
    #[error(transparent)]
    Discovery(#[from] DiscoveryError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("deployment of `{}` failed", .0.agent_id)]
    TransferFailed(DeploymentRecord),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

/// Discovery, bundle choice and deployment protocol for a replacement,
/// computed without touching the device.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplacementPlan {
    pub discovery: Discovery,
    pub manifest: AgentManifest,
    pub deploy: DeployExchange,
}

pub fn plan_replacement<L, R>(
    request: &ReplacementRequest,
    device: &DeviceState,
    catalog: &Catalog,
    links: &mut L,
    cfg: &RegistryConfig,
    now: SimTime,
    loss: &mut R,
) -> Result<ReplacementPlan, ReplacementError>
where
    L: LinkProvider + ?Sized,
    R: UniformSource + ?Sized,
{
    if request.user_interaction {
        return Err(ReplacementError::UserInteraction);
    }
    match device.agent(&request.requesting_agent_id).map(|a| a.state) {
        Some(LifecycleState::Active | LifecycleState::Paused) => {}
        _ => return Err(ReplacementError::RequesterNotRunning(request.requesting_agent_id.clone())),
    }
    if !links.link_at(now).has_coverage() {
        return Err(PlanError::NoConnectivity.into());
    }
    let eligible = catalog.without(|m| !request.allows(m));
    let query = DiscoverQuery {
        capability: request.desired_capability,
        position: device.position,
        arch_mode: ArchMode::Agent,
        credential: device.credential,
        resources: device.resources(),
    };
    let discovery = discover(&query, &eligible, links, cfg, now, loss)?;
    let offered: Vec<AgentManifest> = discovery
        .response
        .offerings
        .iter()
        .filter_map(|o| match o {
            ServiceOffering::DeployableAgent(m) => Some(m.clone()),
            ServiceOffering::RemoteService(_) => None,
        })
        .collect();
    let link = discovery
        .exchange
        .answering_attempt()
        .map(|a| a.link.clone())
        .expect("successful discovery has an answering attempt");
    let manifest = match plan_bundle(
        request.desired_capability,
        &link,
        query.resources,
        &offered,
        cfg.deploy_time_budget_s,
    ) {
        Ok(m) => m.clone(),
        Err(PlanError::UnknownCapability(c)) => return Err(PlanError::NoFeasibleBundle(c).into()),
        Err(e) => return Err(e.into()),
    };
    let start = discovery.exchange.finished_at;
    let deploy = deploy_protocol(&manifest, &device.device_id, links, &cfg.deploy, start, loss);
    Ok(ReplacementPlan {
        discovery,
        manifest,
        deploy,
    })
}

/// Stages, installs and activates the replacement, then expires the
/// requester. On any failure the device is left exactly as before except
/// that staging is rolled back; the requester stays where it was.
pub fn request_replacement<L, R>(
    request: &ReplacementRequest,
    device: &mut DeviceState,
    catalog: &Catalog,
    links: &mut L,
    cfg: &RegistryConfig,
    now: SimTime,
    loss: &mut R,
) -> Result<(DeploymentRecord, Vec<Transition>), ReplacementError>
where
    L: LinkProvider + ?Sized,
    R: UniformSource + ?Sized,
{
    let plan = plan_replacement(request, device, catalog, links, cfg, now, loss)?;
    let mut transitions = device.stage(plan.manifest.clone(), plan.deploy.started_at)?;
    if !plan.deploy.record.installed() {
        transitions.push(device.abort_staging(&plan.manifest.agent_id, plan.deploy.finished_at)?);
        return Err(ReplacementError::TransferFailed(plan.deploy.record));
    }
    transitions.extend(finish_replacement(device, request, &plan.manifest.agent_id, plan.deploy.finished_at)?);
    Ok((plan.deploy.record, transitions))
}

/// Install ack received: commit, activate the newcomer, expire the requester.
pub fn finish_replacement(
    device: &mut DeviceState,
    request: &ReplacementRequest,
    new_agent_id: &str,
    at: SimTime,
) -> Result<Vec<Transition>, DeviceError> {
    let mut out = vec![device.commit_install(new_agent_id, at)?];
    out.push(device.apply(new_agent_id, LifecycleEvent::Activate, at, "replacement")?);
    if device.agent(&request.requesting_agent_id).is_some_and(|a| a.state != LifecycleState::Expired) {
        out.push(device.apply(&request.requesting_agent_id, LifecycleEvent::Expire, at, "replaced")?);
    }
    Ok(out)
}

// ------------------------------------------------------------------- sweep

/// Apoptosis pass. Agents past `activation + ttl` expire and uninstall;
/// already-expired agents uninstall; at end of emergency every agent goes,
/// including dormant ones and deployments still in flight.
pub fn expire_sweep(device: &mut DeviceState, now: SimTime, end_of_emergency: bool) -> (Vec<String>, Vec<Transition>) {
    let mut uninstalled = Vec::new();
    let mut transitions = Vec::new();
    let ids: Vec<String> = device.agents().map(|a| a.manifest.agent_id.clone()).collect();
    for id in ids {
        let Some(agent) = device.agent(&id) else { continue };
        let state = agent.state;
        let ttl_elapsed = agent
            .activated_at
            .is_some_and(|t0| t0 + SimTime::from_secs_f64(agent.manifest.ttl_s) <= now);
        let reason = if end_of_emergency { "end-of-emergency" } else { "ttl-expired" };
        let result = match state {
            LifecycleState::Expired => device.apply(&id, LifecycleEvent::Uninstall, now, "apoptosis").map(|t| vec![t]),
            LifecycleState::Active | LifecycleState::Paused if ttl_elapsed || end_of_emergency => {
                expire_and_uninstall(device, &id, now, reason)
            }
            LifecycleState::Dormant if end_of_emergency => expire_and_uninstall(device, &id, now, reason),
            LifecycleState::Deploying if end_of_emergency => device.abort_staging(&id, now).map(|t| vec![t]),
            LifecycleState::Requested if end_of_emergency => device.forget_requested(&id).map(|_| Vec::new()),
            _ => continue,
        };
        if let Ok(ts) = result {
            if ts.iter().any(|t| t.to == LifecycleState::Uninstalled) {
                uninstalled.push(id.clone());
            }
            transitions.extend(ts);
        }
    }
    (uninstalled, transitions)
}

fn expire_and_uninstall(device: &mut DeviceState, id: &str, now: SimTime, reason: &str) -> Result<Vec<Transition>, DeviceError> {
    let a = device.apply(id, LifecycleEvent::Expire, now, reason)?;
    let b = device.apply(id, LifecycleEvent::Uninstall, now, "apoptosis")?;
    Ok(vec![a, b])
}
