//! Classification tasks and their outcomes.

use serde::{Deserialize, Serialize};

use crate::engine::SimTime;
use crate::registry::{ArchMode, Capability};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRequest {
    pub task_id: String,
    pub device_id: String,
    pub capability: Capability,
    pub payload_bytes: u64,
    pub acceptable_latency_s: f64,
    pub arrived_at: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskCategory {
    FirstTry,
    Retried,
    Timeout,
    /// Answered, but later than the acceptable latency.
    Unacceptable,
}

impl TaskCategory {
    pub const ALL: [TaskCategory; 4] = [
        TaskCategory::FirstTry,
        TaskCategory::Retried,
        TaskCategory::Timeout,
        TaskCategory::Unacceptable,
    ];

    /// Category of an answered task.
    pub fn for_success(attempts: u32, latency_s: f64, acceptable_latency_s: f64) -> Self {
        if latency_s > acceptable_latency_s {
            TaskCategory::Unacceptable
        } else if attempts <= 1 {
            TaskCategory::FirstTry
        } else {
            TaskCategory::Retried
        }
    }

    pub fn is_completed(self) -> bool {
        self != TaskCategory::Timeout
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task_id: String,
    pub device_id: String,
    pub mode: ArchMode,
    pub category: TaskCategory,
    pub attempts: u32,
    /// Arrival to answer, or to giving up for timeouts.
    pub latency_s: f64,
    /// Drawn once per answered task; absent on timeout.
    pub correct: Option<bool>,
}
