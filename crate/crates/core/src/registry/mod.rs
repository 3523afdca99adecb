//! Backend side of both architectures: a discoverable service registry,
//! the condition-aware bundle planner, remote inference and agent
//! deployment.

mod catalog;
mod exchange;
mod planner;
pub mod wire;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use catalog::{AgentManifest, Capability, Catalog, ModelClass, RemoteService, ServiceOffering};
pub use exchange::{
    round_trip, Attempt, AttemptResult, Deadline, ExchangeOutcome, FnLinks, LinkProvider, RetryPolicy, RoundTrip,
};
pub use planner::{is_feasible, plan_bundle, DeviceResources, PlanError};

use crate::device::{DeviceError, DeviceState};
use crate::engine::{SimTime, UniformSource};
use crate::task::{TaskCategory, TaskOutcome, TaskRequest};
use crate::Point;
use wire::{AckOutcome, DeployAck, DeployRequest, DiscoverRequest, DiscoverResponse, InferRequest, InferResponse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchMode {
    /// Backend request/response inference.
    Remote,
    /// On-demand agent deployment with onboard inference.
    Agent,
}

impl ArchMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ArchMode::Remote => "remote",
            ArchMode::Agent => "agent",
        }
    }
}

impl fmt::Display for ArchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "remote" => Ok(ArchMode::Remote),
            "agent" => Ok(ArchMode::Agent),
            other => Err(format!("unknown arch mode `{other}` (expected remote or agent)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub per_attempt_timeout_s: f64,
    pub max_attempts: u32,
    pub response_bytes: u64,
}

impl RemoteConfig {
    pub fn policy(&self) -> RetryPolicy {
        RetryPolicy::fixed(self.max_attempts, self.per_attempt_timeout_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeployConfig {
    pub max_attempts_per_leg: u32,
    /// Grace period after a leg should have finished before it is retried.
    pub ack_slack_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryConfig {
    pub deploy_time_budget_s: f64,
    pub discovery: RetryPolicy,
    pub remote: RemoteConfig,
    pub deploy: DeployConfig,
}

impl RegistryConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.deploy_time_budget_s > 0.0) {
            return Err("registry.deploy_time_budget_s must be > 0".into());
        }
        if self.discovery.max_attempts == 0 || self.remote.max_attempts == 0 || self.deploy.max_attempts_per_leg == 0 {
            return Err("registry: attempt limits must be >= 1".into());
        }
        if !(self.remote.per_attempt_timeout_s > 0.0) {
            return Err("registry.remote.per_attempt_timeout_s must be > 0".into());
        }
        if !(self.deploy.ack_slack_s >= 0.0) {
            return Err("registry.deploy.ack_slack_s must be >= 0".into());
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- discovery

#[derive(Debug, Clone, PartialEq)]
pub struct DiscoverQuery {
    pub capability: Capability,
    pub position: Point,
    pub arch_mode: ArchMode,
    pub credential: bool,
    pub resources: DeviceResources,
}

impl DiscoverQuery {
    pub fn request(&self) -> DiscoverRequest {
        DiscoverRequest {
            capability: self.capability,
            position: [self.position.x, self.position.y],
            arch_mode: self.arch_mode,
            credential: self.credential,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discovery {
    pub request: DiscoverRequest,
    pub response: DiscoverResponse,
    pub exchange: ExchangeOutcome,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiscoveryError {
    #[error("discovery timed out after {} attempts", exchange.attempts.len())]
    Timeout { exchange: ExchangeOutcome },
    #[error("device is not an authorized consumer")]
    Unauthorized,
}

/// Offerings for `query` as seen over `link`.
pub fn offerings_for(
    query: &DiscoverQuery,
    catalog: &Catalog,
    link: &crate::network::LinkSample,
    cfg: &RegistryConfig,
) -> Vec<ServiceOffering> {
    match query.arch_mode {
        ArchMode::Remote => catalog
            .remote_for(query.capability)
            .cloned()
            .map(ServiceOffering::RemoteService)
            .collect(),
        ArchMode::Agent => catalog
            .agents_for(query.capability)
            .filter(|m| is_feasible(m, link, query.resources, cfg.deploy_time_budget_s))
            .cloned()
            .map(ServiceOffering::DeployableAgent)
            .collect(),
    }
}

/// Message sizes of a discovery exchange. The response is sized as the
/// unfiltered listing for the capability.
pub fn discovery_round_trip(query: &DiscoverQuery, catalog: &Catalog) -> RoundTrip {
    let full = DiscoverResponse {
        offerings: match query.arch_mode {
            ArchMode::Remote => catalog.remote_for(query.capability).cloned().map(ServiceOffering::RemoteService).collect(),
            ArchMode::Agent => catalog.agents_for(query.capability).cloned().map(ServiceOffering::DeployableAgent).collect(),
        },
    };
    RoundTrip::new(wire::encoded_len(&query.request()), wire::encoded_len(&full), 0.0)
}

/// Queries the registry. The response lists remote endpoints, or deployable
/// agents that the planner would accept over the answering link.
pub fn discover<L, R>(
    query: &DiscoverQuery,
    catalog: &Catalog,
    links: &mut L,
    cfg: &RegistryConfig,
    start: SimTime,
    loss: &mut R,
) -> Result<Discovery, DiscoveryError>
where
    L: LinkProvider + ?Sized,
    R: UniformSource + ?Sized,
{
    if !query.credential {
        return Err(DiscoveryError::Unauthorized);
    }
    let request = query.request();
    let rt = discovery_round_trip(query, catalog);
    let exchange = round_trip(rt, links, cfg.discovery, start, loss);
    let Some(answer) = exchange.answering_attempt() else {
        return Err(DiscoveryError::Timeout { exchange });
    };
    let response = DiscoverResponse {
        offerings: offerings_for(query, catalog, &answer.link, cfg),
    };
    Ok(Discovery {
        request,
        response,
        exchange,
    })
}

// ---------------------------------------------------------- remote inference

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteInference {
    pub request: InferRequest,
    pub response: InferResponse,
    pub outcome: TaskOutcome,
    pub exchange: ExchangeOutcome,
}

/// Uploads the task image to `service` and waits for the label, retrying
/// lost or late attempts. Correctness is drawn once, only when answered.
pub fn remote_infer<L, R1, R2>(
    task: &TaskRequest,
    service: &RemoteService,
    links: &mut L,
    cfg: &RemoteConfig,
    loss: &mut R1,
    inference: &mut R2,
) -> RemoteInference
where
    L: LinkProvider + ?Sized,
    R1: UniformSource + ?Sized,
    R2: UniformSource + ?Sized,
{
    remote_infer_from(task, task.arrived_at, service, links, cfg, loss, inference)
}

/// As [`remote_infer`], with the first upload at `start` (for example after
/// a discovery round). Latency still counts from the task's arrival.
pub fn remote_infer_from<L, R1, R2>(
    task: &TaskRequest,
    start: SimTime,
    service: &RemoteService,
    links: &mut L,
    cfg: &RemoteConfig,
    loss: &mut R1,
    inference: &mut R2,
) -> RemoteInference
where
    L: LinkProvider + ?Sized,
    R1: UniformSource + ?Sized,
    R2: UniformSource + ?Sized,
{
    let request = InferRequest {
        task_id: task.task_id.clone(),
        offering_id: service.offering_id.clone(),
        image_bytes: task.payload_bytes,
    };
    let response = InferResponse {
        task_id: task.task_id.clone(),
    };
    let rt = RoundTrip::new(task.payload_bytes, cfg.response_bytes, service.backend_compute_s);
    let exchange = round_trip(rt, links, cfg.policy(), start, loss);
    let outcome = match exchange.answering_attempt() {
        Some(a) => {
            let answered = exchange.answered_at.expect("answering attempt has a time");
            let latency_s = (answered - task.arrived_at).as_secs_f64();
            TaskOutcome {
                task_id: task.task_id.clone(),
                device_id: task.device_id.clone(),
                mode: ArchMode::Remote,
                category: TaskCategory::for_success(a.number, latency_s, task.acceptable_latency_s),
                attempts: a.number,
                latency_s,
                correct: Some(inference.bernoulli(service.accuracy)),
            }
        }
        None => TaskOutcome {
            task_id: task.task_id.clone(),
            device_id: task.device_id.clone(),
            mode: ArchMode::Remote,
            category: TaskCategory::Timeout,
            attempts: exchange.attempts.len() as u32,
            latency_s: (exchange.finished_at - task.arrived_at).as_secs_f64(),
            correct: None,
        },
    };
    RemoteInference {
        request,
        response,
        outcome,
        exchange,
    }
}

// ---------------------------------------------------------------- deployment

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum DeployOutcome {
    Installed,
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentRecord {
    pub agent_id: String,
    pub device_id: String,
    /// Completed round trips (request/manifest, then payload/ack).
    pub round_trips: u32,
    /// Total sends across both legs, retries included.
    pub attempts: u32,
    /// Request to acknowledgment, or to giving up.
    pub transfer_seconds: f64,
    pub outcome: DeployOutcome,
}

impl DeploymentRecord {
    pub fn installed(&self) -> bool {
        self.outcome == DeployOutcome::Installed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeployLeg {
    pub request: wire::WireMessage,
    pub response: wire::WireMessage,
    pub exchange: ExchangeOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeployExchange {
    pub record: DeploymentRecord,
    pub legs: Vec<DeployLeg>,
    pub started_at: SimTime,
    pub finished_at: SimTime,
}

/// Message sizes of the two deployment legs: request and manifest, then
/// bundle and acknowledgment.
pub fn deploy_round_trips(manifest: &AgentManifest, device_id: &str) -> [RoundTrip; 2] {
    let request = DeployRequest {
        agent_id: manifest.agent_id.clone(),
        device_id: device_id.to_owned(),
    };
    let ack = DeployAck {
        outcome: AckOutcome::Installed,
    };
    [
        RoundTrip::new(wire::encoded_len(&request), wire::encoded_len(manifest), 0.0),
        RoundTrip::new(manifest.payload_bytes, wire::encoded_len(&ack), 0.0),
    ]
}

/// Runs the two-leg deployment protocol without touching device state:
/// leg 1 sends the request and receives the manifest, leg 2 moves the bundle
/// and returns the install acknowledgment.
pub fn deploy_protocol<L, R>(
    manifest: &AgentManifest,
    device_id: &str,
    links: &mut L,
    cfg: &DeployConfig,
    start: SimTime,
    loss: &mut R,
) -> DeployExchange
where
    L: LinkProvider + ?Sized,
    R: UniformSource + ?Sized,
{
    let request = DeployRequest {
        agent_id: manifest.agent_id.clone(),
        device_id: device_id.to_owned(),
    };
    let leg_policy = RetryPolicy {
        max_attempts: cfg.max_attempts_per_leg,
        deadline: Deadline::Expected { slack_s: cfg.ack_slack_s },
    };

    let mut legs = Vec::with_capacity(2);
    let mut t = start;
    let mut round_trips = 0;
    let mut attempts = 0;
    let mut failure = None;

    let [rt1, rt2] = deploy_round_trips(manifest, device_id);
    let leg1 = round_trip(
        rt1,
        links,
        leg_policy,
        t,
        loss,
    );
    attempts += leg1.attempts.len() as u32;
    t = leg1.finished_at;
    let leg1_ok = leg1.succeeded();
    legs.push(DeployLeg {
        request: wire::WireMessage::DeployRequest(request.clone()),
        response: wire::WireMessage::DeployAck(DeployAck {
            outcome: if leg1_ok { AckOutcome::Installed } else { AckOutcome::Failed },
        }),
        exchange: leg1,
    });
    if leg1_ok {
        round_trips += 1;
        let leg2 = round_trip(
            rt2,
            links,
            leg_policy,
            t,
            loss,
        );
        attempts += leg2.attempts.len() as u32;
        t = leg2.finished_at;
        let ok = leg2.succeeded();
        legs.push(DeployLeg {
            request: wire::WireMessage::DeployRequest(request),
            response: wire::WireMessage::DeployAck(DeployAck {
                outcome: if ok { AckOutcome::Installed } else { AckOutcome::Failed },
            }),
            exchange: leg2,
        });
        if ok {
            round_trips += 1;
        } else {
            failure = Some("bundle transfer exhausted retries".to_owned());
        }
    } else {
        failure = Some("deploy request exhausted retries".to_owned());
    }

    let record = DeploymentRecord {
        agent_id: manifest.agent_id.clone(),
        device_id: device_id.to_owned(),
        round_trips,
        attempts,
        transfer_seconds: (t - start).as_secs_f64(),
        outcome: match failure {
            None => DeployOutcome::Installed,
            Some(reason) => DeployOutcome::Failed { reason },
        },
    };
    DeployExchange {
        record,
        legs,
        started_at: start,
        finished_at: t,
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeployError {
    #[error("transfer of `{}` failed: {}", .0.agent_id, match &.0.outcome { DeployOutcome::Failed { reason } => reason.as_str(), _ => "" })]
    TransferFailed(DeploymentRecord),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

/// Stages the agent on the device, runs the protocol, and either installs
/// it Dormant or rolls the staging back. Device state is unchanged on error.
pub fn deploy<L, R>(
    manifest: &AgentManifest,
    device: &mut DeviceState,
    links: &mut L,
    cfg: &DeployConfig,
    start: SimTime,
    loss: &mut R,
) -> Result<DeploymentRecord, DeployError>
where
    L: LinkProvider + ?Sized,
    R: UniformSource + ?Sized,
{
    device.stage(manifest.clone(), start)?;
    let ex = deploy_protocol(manifest, &device.device_id, links, cfg, start, loss);
    if ex.record.installed() {
        device.commit_install(&manifest.agent_id, ex.finished_at)?;
        Ok(ex.record)
    } else {
        device.abort_staging(&manifest.agent_id, ex.finished_at)?;
        Err(DeployError::TransferFailed(ex.record))
    }
}
