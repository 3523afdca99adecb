//! JSON wire messages exchanged between devices and the registry.
//!
//! Sizes on the simulated network are the byte length of the serialized
//! message, except bundle payloads which travel as opaque bytes.

use serde::{Deserialize, Serialize};

use super::catalog::{Capability, ServiceOffering};
use super::ArchMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoverRequest {
    pub capability: Capability,
    /// Local planar meters `[x, y]`.
    pub position: [f64; 2],
    pub arch_mode: ArchMode,
    pub credential: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoverResponse {
    pub offerings: Vec<ServiceOffering>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeployRequest {
    pub agent_id: String,
    pub device_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AckOutcome {
    Installed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeployAck {
    pub outcome: AckOutcome,
}

/// Image upload to a remote inference endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferRequest {
    pub task_id: String,
    pub offering_id: String,
    pub image_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferResponse {
    pub task_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum WireMessage {
    DiscoverRequest(DiscoverRequest),
    DiscoverResponse(DiscoverResponse),
    DeployRequest(DeployRequest),
    DeployAck(DeployAck),
    InferRequest(InferRequest),
    InferResponse(InferResponse),
}

impl WireMessage {
    pub fn type_name(&self) -> &'static str {
        match self {
            WireMessage::DiscoverRequest(_) => "DiscoverRequest",
            WireMessage::DiscoverResponse(_) => "DiscoverResponse",
            WireMessage::DeployRequest(_) => "DeployRequest",
            WireMessage::DeployAck(_) => "DeployAck",
            WireMessage::InferRequest(_) => "InferRequest",
            WireMessage::InferResponse(_) => "InferResponse",
        }
    }
}

/// Serialized length in bytes.
pub fn encoded_len<T: Serialize>(msg: &T) -> u64 {
    serde_json::to_vec(msg).map_or(0, |v| v.len() as u64)
}
