use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Capability {
    DrugLabelClassification,
    Localization,
    HazardDetection,
}

impl Capability {
    pub fn as_str(self) -> &'static str {
        match self {
            Capability::DrugLabelClassification => "drug-label-classification",
            Capability::Localization => "localization",
            Capability::HazardDetection => "hazard-detection",
        }
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelClass {
    #[serde(rename = "DNN")]
    Dnn,
    #[serde(rename = "MLP")]
    Mlp,
    #[serde(rename = "LOGREG")]
    LogReg,
    #[serde(rename = "GPS-LOC")]
    GpsLoc,
    #[serde(rename = "PDR-LOC")]
    PdrLoc,
}

impl ModelClass {
    /// Rank within the classifier ladder (higher = heavier, more accurate).
    fn classifier_rank(self) -> Option<u8> {
        match self {
            ModelClass::LogReg => Some(0),
            ModelClass::Mlp => Some(1),
            ModelClass::Dnn => Some(2),
            _ => None,
        }
    }

    pub fn relies_on_gps(self) -> bool {
        self == ModelClass::GpsLoc
    }
}

/// Deployable agent description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentManifest {
    pub agent_id: String,
    pub capability: Capability,
    pub model_class: ModelClass,
    pub payload_bytes: u64,
    pub memory_footprint_bytes: u64,
    /// Battery percent consumed by one inference.
    pub inference_energy_pct: f64,
    /// Onboard seconds per inference.
    pub inference_latency_s: f64,
    /// Probability that one inference is correct.
    pub accuracy: f64,
    /// Seconds from activation to expiry.
    pub ttl_s: f64,
    pub dormant_allowed: bool,
}

/// Backend inference endpoint (request/response mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteService {
    pub offering_id: String,
    pub capability: Capability,
    pub backend_compute_s: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ServiceOffering {
    RemoteService(RemoteService),
    DeployableAgent(AgentManifest),
}

impl ServiceOffering {
    pub fn offering_id(&self) -> &str {
        match self {
            ServiceOffering::RemoteService(r) => &r.offering_id,
            ServiceOffering::DeployableAgent(m) => &m.agent_id,
        }
    }

    pub fn capability(&self) -> Capability {
        match self {
            ServiceOffering::RemoteService(r) => r.capability,
            ServiceOffering::DeployableAgent(m) => m.capability,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Catalog {
    pub agents: Vec<AgentManifest>,
    pub remote_services: Vec<RemoteService>,
}

impl Catalog {
    pub fn agents_for(&self, capability: Capability) -> impl Iterator<Item = &AgentManifest> {
        self.agents.iter().filter(move |m| m.capability == capability)
    }

    pub fn agent(&self, agent_id: &str) -> Option<&AgentManifest> {
        self.agents.iter().find(|m| m.agent_id == agent_id)
    }

    pub fn remote_for(&self, capability: Capability) -> impl Iterator<Item = &RemoteService> {
        self.remote_services.iter().filter(move |r| r.capability == capability)
    }

    /// Copy without agents matching `drop`.
    pub fn without(&self, drop: impl Fn(&AgentManifest) -> bool) -> Catalog {
        Catalog {
            agents: self.agents.iter().filter(|m| !drop(m)).cloned().collect(),
            remote_services: self.remote_services.clone(),
        }
    }

    /// Checks field ranges, id uniqueness and the classifier ladder: within a
    /// capability, DNN beats MLP beats LOGREG on accuracy and is larger on
    /// payload.
    pub fn validate(&self) -> Result<(), String> {
        let mut ids = BTreeSet::new();
        for (i, m) in self.agents.iter().enumerate() {
            let at = format!("catalog.agents[{i}]");
            if m.agent_id.trim().is_empty() {
                return Err(format!("{at}.agent_id is empty"));
            }
            if !ids.insert(m.agent_id.as_str()) {
                return Err(format!("{at}.agent_id `{}` is duplicated", m.agent_id));
            }
            if !(0.0..=1.0).contains(&m.accuracy) {
                return Err(format!("{at}.accuracy must be in [0, 1]"));
            }
            if !(m.ttl_s > 0.0 && m.ttl_s.is_finite()) {
                return Err(format!("{at}.ttl_s must be > 0"));
            }
            if !(m.inference_energy_pct >= 0.0 && m.inference_energy_pct <= 100.0) {
                return Err(format!("{at}.inference_energy_pct must be in [0, 100]"));
            }
            if !(m.inference_latency_s >= 0.0 && m.inference_latency_s.is_finite()) {
                return Err(format!("{at}.inference_latency_s must be >= 0"));
            }
        }
        for (i, r) in self.remote_services.iter().enumerate() {
            let at = format!("catalog.remote_services[{i}]");
            if !ids.insert(r.offering_id.as_str()) {
                return Err(format!("{at}.offering_id `{}` is duplicated", r.offering_id));
            }
            if !(0.0..=1.0).contains(&r.accuracy) {
                return Err(format!("{at}.accuracy must be in [0, 1]"));
            }
            if !(r.backend_compute_s >= 0.0 && r.backend_compute_s.is_finite()) {
                return Err(format!("{at}.backend_compute_s must be >= 0"));
            }
        }
        for a in &self.agents {
            for b in &self.agents {
                if a.capability != b.capability {
                    continue;
                }
                let (Some(ra), Some(rb)) = (a.model_class.classifier_rank(), b.model_class.classifier_rank()) else {
                    continue;
                };
                if ra > rb && !(a.accuracy > b.accuracy && a.payload_bytes > b.payload_bytes) {
                    return Err(format!(
                        "catalog: {:?} agent `{}` must be more accurate and larger than {:?} agent `{}`",
                        a.model_class, a.agent_id, b.model_class, b.agent_id
                    ));
                }
            }
        }
        Ok(())
    }
}
