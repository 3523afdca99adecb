//! Event-log payloads. Each variant's `kind` is its kebab-case name.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::device::GpsFix;
use crate::engine::{adjacent_payload, from_adjacent, EventPayload};
use crate::lifecycle::{ReplacementRequest, Transition};
use crate::registry::{ArchMode, Capability, DeploymentRecord, ModelClass};
use crate::task::{TaskOutcome, TaskRequest};
use crate::Point;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStart {
    pub scenario_id: String,
    pub seed: u64,
    pub arch_mode: ArchMode,
    pub duration_s: f64,
    pub devices: Vec<String>,
}

/// Which side of an exchange a message belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Leg {
    Request,
    Response,
}

/// One message crossing the device radio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageRecord {
    /// `discover`, `infer`, `deploy-request` or `deploy-bundle`.
    pub purpose: String,
    pub message_type: String,
    pub leg: Leg,
    pub attempt: u32,
    pub bytes: u64,
    pub delivered: bool,
    /// Serving tower, peer or relay description; absent without coverage.
    pub via: Option<String>,
    /// Task or agent the exchange is about.
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryRecord {
    pub capability: Capability,
    pub arch_mode: ArchMode,
    pub attempts: u32,
    pub succeeded: bool,
    pub offerings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeployStart {
    pub agent_id: String,
    /// Set when the deployment replaces a paused agent.
    pub replaces: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeployComplete {
    pub record: DeploymentRecord,
    pub replaces: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpsFixRecord {
    pub fix: GpsFix,
    pub truth: Point,
    pub indoor: bool,
    pub error_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionReport {
    pub agent_id: String,
    pub model_class: ModelClass,
    pub reported: Point,
    pub truth: Point,
    pub error_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplacementFailed {
    pub requesting_agent_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryRecord {
    pub battery_pct: f64,
    pub memory_used_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub end_of_emergency: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserInteraction {
    pub action: String,
    pub capability: Capability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "kebab-case")]
pub enum Record {
    RunStart(RunStart),
    Tick,
    TaskArrival(TaskRequest),
    Message(MessageRecord),
    TaskOutcome(TaskOutcome),
    Discovery(DiscoveryRecord),
    DeployStart(DeployStart),
    DeployComplete(DeployComplete),
    Lifecycle(Transition),
    GpsFix(GpsFixRecord),
    PositionReport(PositionReport),
    ReplacementRequest(ReplacementRequest),
    ReplacementFailed(ReplacementFailed),
    Battery(BatteryRecord),
    Sweep(Sweep),
    UserInteraction(UserInteraction),
    DeviceDepleted,
    RunEnd,
}

impl EventPayload for Record {
    fn kind(&self) -> &'static str {
        match self {
            Record::RunStart(_) => "run-start",
            Record::Tick => "tick",
            Record::TaskArrival(_) => "task-arrival",
            Record::Message(_) => "message",
            Record::TaskOutcome(_) => "task-outcome",
            Record::Discovery(_) => "discovery",
            Record::DeployStart(_) => "deploy-start",
            Record::DeployComplete(_) => "deploy-complete",
            Record::Lifecycle(_) => "lifecycle",
            Record::GpsFix(_) => "gps-fix",
            Record::PositionReport(_) => "position-report",
            Record::ReplacementRequest(_) => "replacement-request",
            Record::ReplacementFailed(_) => "replacement-failed",
            Record::Battery(_) => "battery",
            Record::Sweep(_) => "sweep",
            Record::UserInteraction(_) => "user-interaction",
            Record::DeviceDepleted => "device-depleted",
            Record::RunEnd => "run-end",
        }
    }

    fn to_json(&self) -> Value {
        adjacent_payload(self)
    }

    fn from_json(kind: &str, payload: Value) -> Result<Self, String> {
        from_adjacent(kind, payload)
    }

    fn run_identity(&self) -> Option<(&str, u64)> {
        match self {
            Record::RunStart(r) => Some((&r.scenario_id, r.seed)),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_matches_serde_tag() {
        let samples = [
            Record::Tick,
            Record::DeviceDepleted,
            Record::RunEnd,
            Record::Sweep(Sweep { end_of_emergency: true }),
            Record::Battery(BatteryRecord {
                battery_pct: 99.5,
                memory_used_bytes: 12,
            }),
        ];
        for r in samples {
            let v = serde_json::to_value(&r).unwrap();
            assert_eq!(v["kind"], r.kind());
            assert_eq!(Record::from_json(r.kind(), r.to_json()).unwrap(), r);
        }
    }
}
