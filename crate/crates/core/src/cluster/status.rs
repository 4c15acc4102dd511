use serde::{Deserialize, Serialize};

use crate::grpo::UpdateMetrics;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkerStatus {
    Alive,
    Suspect,
    Dead,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub allocations: u64,
    pub completions: u64,
    pub lost: u64,
    /// Worker deaths observed.
    pub failures: u64,
    pub reallocations: u64,
    pub steps: u64,
    /// Step retries answered from the idempotence cache.
    pub cache_hits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerView {
    pub worker_id: String,
    pub address: String,
    pub capacity: u32,
    pub load: u32,
    pub status: WorkerStatus,
    pub draining: bool,
    pub heartbeat_age_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotView {
    pub slot_id: String,
    pub worker_id: String,
    pub task_id: Option<String>,
    pub session_id: Option<String>,
    pub age_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingView {
    pub phase: Option<String>,
    pub paused: bool,
    pub updates: u64,
}

/// Point-in-time view served on `GET /status` and in `status_report` replies.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatusReport {
    pub proto_version: u32,
    pub workers: Vec<WorkerView>,
    pub slots: Vec<SlotView>,
    pub active_sessions: u64,
    pub capacity: u64,
    pub counters: Counters,
    pub training: TrainingView,
    pub metrics: Vec<UpdateMetrics>,
}
