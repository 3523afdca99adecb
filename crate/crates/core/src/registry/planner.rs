//! Network-condition-aware bundle selection.

use thiserror::Error;

use super::catalog::{AgentManifest, Capability};
use crate::network::{transfer_time, LinkSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeviceResources {
    pub free_memory_bytes: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("no bundle for {0} fits the transfer budget and device memory")]
    NoFeasibleBundle(Capability),
    #[error("catalog has no agent for {0}")]
    UnknownCapability(Capability),
    #[error("no cellular coverage and no peer path")]
    NoConnectivity,
}

/// Transfer within budget and footprint within free memory.
pub fn is_feasible(m: &AgentManifest, link: &LinkSample, device: DeviceResources, budget_s: f64) -> bool {
    let fits_time = transfer_time(m.payload_bytes, link).is_ok_and(|t| t <= budget_s);
    fits_time && m.memory_footprint_bytes <= device.free_memory_bytes
}

/// Most accurate feasible manifest for `capability`. Equal accuracy (only
/// possible outside the classifier ladder) falls back to smaller payload,
/// then agent id.
pub fn plan_bundle<'a>(
    capability: Capability,
    link: &LinkSample,
    device: DeviceResources,
    agents: &'a [AgentManifest],
    budget_s: f64,
) -> Result<&'a AgentManifest, PlanError> {
    let mut candidates = agents.iter().filter(|m| m.capability == capability).peekable();
    if candidates.peek().is_none() {
        return Err(PlanError::UnknownCapability(capability));
    }
    if !link.has_coverage() {
        return Err(PlanError::NoConnectivity);
    }
    candidates
        .filter(|m| is_feasible(m, link, device, budget_s))
        .max_by(|a, b| {
            a.accuracy
                .total_cmp(&b.accuracy)
                .then(b.payload_bytes.cmp(&a.payload_bytes))
                .then(b.agent_id.cmp(&a.agent_id))
        })
        .ok_or(PlanError::NoFeasibleBundle(capability))
}
