//! Mobile device model: memory ledger of installed agents, battery,
//! sensors and onboard inference.

mod battery;
mod pdr;
mod sensors;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use battery::{Activity, Battery, BatteryModel};
pub use pdr::{pdr_track, pdr_update, Pose2, Stride};
pub use sensors::{sample_gps, sample_imu, GpsFix, ImuStep, SensorConfig, SensorReading};

use crate::engine::{SimTime, UniformSource};
use crate::lifecycle::{next_state, IllegalTransition, LifecycleEvent, LifecycleState, Transition};
use crate::registry::{AgentManifest, ArchMode, DeviceResources};
use crate::task::{TaskCategory, TaskOutcome, TaskRequest};
use crate::Point;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("agent `{agent_id}` needs {needed} bytes but only {free} are free")]
    InsufficientMemory { agent_id: String, needed: u64, free: u64 },
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("agent `{0}` is already present")]
    AlreadyPresent(String),
    #[error("agent `{agent_id}`: {source}")]
    Transition {
        agent_id: String,
        #[source]
        source: IllegalTransition,
    },
    #[error("agent `{0}` is not active")]
    AgentNotActive(String),
    #[error("agent `{agent_id}` cannot serve `{capability}`")]
    CapabilityMismatch { agent_id: String, capability: String },
    #[error("battery depleted")]
    BatteryDepleted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstalledAgent {
    pub manifest: AgentManifest,
    pub state: LifecycleState,
    pub installed_at: Option<SimTime>,
    /// First activation; the TTL counts from here.
    pub activated_at: Option<SimTime>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceState {
    pub device_id: String,
    pub position: Point,
    pub indoor: bool,
    pub credential: bool,
    pub battery: Battery,
    pub memory_capacity_bytes: u64,
    memory_used_bytes: u64,
    agents: BTreeMap<String, InstalledAgent>,
}

impl DeviceState {
    pub fn new(device_id: impl Into<String>, memory_capacity_bytes: u64, battery: Battery) -> Self {
        DeviceState {
            device_id: device_id.into(),
            position: Point::origin(),
            indoor: false,
            credential: true,
            battery,
            memory_capacity_bytes,
            memory_used_bytes: 0,
            agents: BTreeMap::new(),
        }
    }

    pub fn memory_used_bytes(&self) -> u64 {
        self.memory_used_bytes
    }

    pub fn free_memory_bytes(&self) -> u64 {
        self.memory_capacity_bytes.saturating_sub(self.memory_used_bytes)
    }

    pub fn resources(&self) -> DeviceResources {
        DeviceResources {
            free_memory_bytes: self.free_memory_bytes(),
        }
    }

    pub fn agents(&self) -> impl Iterator<Item = &InstalledAgent> {
        self.agents.values()
    }

    pub fn agent(&self, agent_id: &str) -> Option<&InstalledAgent> {
        self.agents.get(agent_id)
    }

    /// Active agent for `capability`, if any.
    pub fn active_for(&self, capability: crate::registry::Capability) -> Option<&InstalledAgent> {
        self.agents
            .values()
            .find(|a| a.manifest.capability == capability && a.state == LifecycleState::Active)
    }

    /// Agent for `capability` that is dormant or active, preferring active.
    pub fn usable_for(&self, capability: crate::registry::Capability) -> Option<&InstalledAgent> {
        self.active_for(capability).or_else(|| {
            self.agents
                .values()
                .find(|a| a.manifest.capability == capability && a.state == LifecycleState::Dormant)
        })
    }

    /// Sum of footprints over memory-holding states; equals the ledger.
    pub fn recomputed_memory_bytes(&self) -> u64 {
        self.agents
            .values()
            .filter(|a| a.state.holds_memory())
            .map(|a| a.manifest.memory_footprint_bytes)
            .sum()
    }

    /// Registers the agent as Requested and moves it to Deploying, reserving
    /// its footprint.
    pub fn stage(&mut self, manifest: AgentManifest, now: SimTime) -> Result<Vec<Transition>, DeviceError> {
        let id = manifest.agent_id.clone();
        if self.agents.contains_key(&id) {
            return Err(DeviceError::AlreadyPresent(id));
        }
        let free = self.free_memory_bytes();
        if manifest.memory_footprint_bytes > free {
            return Err(DeviceError::InsufficientMemory {
                agent_id: id,
                needed: manifest.memory_footprint_bytes,
                free,
            });
        }
        self.agents.insert(
            id.clone(),
            InstalledAgent {
                manifest,
                state: LifecycleState::Requested,
                installed_at: None,
                activated_at: None,
            },
        );
        let t = self.apply(&id, LifecycleEvent::Deploy, now, "deploy-start")?;
        Ok(vec![t])
    }

    pub fn commit_install(&mut self, agent_id: &str, now: SimTime) -> Result<Transition, DeviceError> {
        self.apply(agent_id, LifecycleEvent::Installed, now, "installed")
    }

    pub fn abort_staging(&mut self, agent_id: &str, now: SimTime) -> Result<Transition, DeviceError> {
        self.apply(agent_id, LifecycleEvent::TransferFailed, now, "transfer-failed")
    }

    /// Stage and commit in one step (preinstalled agents, tests).
    pub fn install(&mut self, manifest: AgentManifest, now: SimTime) -> Result<Vec<Transition>, DeviceError> {
        let id = manifest.agent_id.clone();
        let mut out = self.stage(manifest, now)?;
        out.push(self.commit_install(&id, now)?);
        Ok(out)
    }

    /// Removes an agent from any state by the shortest legal path.
    pub fn uninstall(&mut self, agent_id: &str, now: SimTime) -> Result<Vec<Transition>, DeviceError> {
        let state = self
            .agents
            .get(agent_id)
            .ok_or_else(|| DeviceError::UnknownAgent(agent_id.to_owned()))?
            .state;
        match state {
            LifecycleState::Requested => self.forget_requested(agent_id).map(|_| Vec::new()),
            LifecycleState::Deploying => Ok(vec![self.abort_staging(agent_id, now)?]),
            LifecycleState::Expired => Ok(vec![self.apply(agent_id, LifecycleEvent::Uninstall, now, "uninstall")?]),
            LifecycleState::Uninstalled => Ok(Vec::new()),
            _ => Ok(vec![
                self.apply(agent_id, LifecycleEvent::Expire, now, "uninstall")?,
                self.apply(agent_id, LifecycleEvent::Uninstall, now, "uninstall")?,
            ]),
        }
    }

    /// Drops an agent that never left Requested.
    pub fn forget_requested(&mut self, agent_id: &str) -> Result<(), DeviceError> {
        match self.agents.get(agent_id) {
            Some(a) if a.state == LifecycleState::Requested => {
                self.agents.remove(agent_id);
                Ok(())
            }
            Some(a) => Err(DeviceError::Transition {
                agent_id: agent_id.to_owned(),
                source: IllegalTransition {
                    from: a.state,
                    event: LifecycleEvent::Uninstall,
                },
            }),
            None => Err(DeviceError::UnknownAgent(agent_id.to_owned())),
        }
    }

    /// Applies one lifecycle event, keeping the memory ledger in step.
    /// Uninstalled agents are removed from the device.
    pub fn apply(&mut self, agent_id: &str, event: LifecycleEvent, now: SimTime, reason: &str) -> Result<Transition, DeviceError> {
        let agent = self
            .agents
            .get_mut(agent_id)
            .ok_or_else(|| DeviceError::UnknownAgent(agent_id.to_owned()))?;
        let from = agent.state;
        let to = next_state(from, event).map_err(|source| DeviceError::Transition {
            agent_id: agent_id.to_owned(),
            source,
        })?;
        let footprint = agent.manifest.memory_footprint_bytes;
        agent.state = to;
        match event {
            LifecycleEvent::Installed => agent.installed_at = Some(now),
            LifecycleEvent::Activate if agent.activated_at.is_none() => agent.activated_at = Some(now),
            _ => {}
        }
        match (from.holds_memory(), to.holds_memory()) {
            (false, true) => self.memory_used_bytes += footprint,
            (true, false) => self.memory_used_bytes -= footprint,
            _ => {}
        }
        if to == LifecycleState::Uninstalled {
            self.agents.remove(agent_id);
        }
        Ok(Transition {
            agent_id: agent_id.to_owned(),
            from,
            to,
            reason: reason.to_owned(),
        })
    }

    /// Runs one onboard inference with an active agent and charges its energy.
    /// Correctness is one Bernoulli draw at the manifest accuracy.
    pub fn run_inference<R: UniformSource + ?Sized>(
        &mut self,
        agent_id: &str,
        task: &TaskRequest,
        rng: &mut R,
    ) -> Result<TaskOutcome, DeviceError> {
        if self.battery.is_depleted() {
            return Err(DeviceError::BatteryDepleted);
        }
        let agent = self
            .agents
            .get(agent_id)
            .ok_or_else(|| DeviceError::UnknownAgent(agent_id.to_owned()))?;
        if agent.state != LifecycleState::Active {
            return Err(DeviceError::AgentNotActive(agent_id.to_owned()));
        }
        if agent.manifest.capability != task.capability {
            return Err(DeviceError::CapabilityMismatch {
                agent_id: agent_id.to_owned(),
                capability: task.capability.to_string(),
            });
        }
        let (accuracy, latency_s, energy) = (
            agent.manifest.accuracy,
            agent.manifest.inference_latency_s,
            agent.manifest.inference_energy_pct,
        );
        let correct = rng.bernoulli(accuracy);
        self.battery.drain_pct(energy);
        Ok(TaskOutcome {
            task_id: task.task_id.clone(),
            device_id: self.device_id.clone(),
            mode: ArchMode::Agent,
            category: TaskCategory::FirstTry,
            attempts: 1,
            latency_s,
            correct: Some(correct),
        })
    }
}

#[cfg(test)]
mod tests;
