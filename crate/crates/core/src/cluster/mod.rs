//! Controller/worker orchestration of simulated environments.

mod controller;
pub mod local;
pub mod state;
pub mod status;
pub mod wire;
pub mod worker;

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

pub use controller::Controller;
pub use local::{LocalCluster, LocalTransport};
pub use state::{ClusterState, EnvSlot, Reservation, SessionRecord, Timing, WorkerInfo};
pub use status::{Counters, SlotView, StatusReport, TrainingView, WorkerStatus, WorkerView};
pub use wire::{Envelope, ErrorCode, WireError, WireMessage, PROTO_VERSION};
pub use worker::{HostCounters, WorkerHost};

use crate::envsim::{ActionSpace, StepOutcome, TaskSpec};
use crate::grpo::UpdateMetrics;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClusterError {
    #[error("worker {0} is already registered and alive")]
    DuplicateLiveWorker(String),
    #[error("unknown worker {0}")]
    UnknownWorker(String),
    #[error("no idle slot on any alive worker")]
    NoCapacity,
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("session {0} lost with its worker")]
    SessionLost(String),
    #[error("episode in session {0} already finished")]
    EpisodeFinished(String),
    #[error("request timed out")]
    Timeout,
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("cluster unavailable: {0}")]
    Unavailable(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl ClusterError {
    pub fn code(&self) -> ErrorCode {
        match self {
            ClusterError::DuplicateLiveWorker(_) => ErrorCode::DuplicateLiveWorker,
            ClusterError::UnknownWorker(_) => ErrorCode::UnknownWorker,
            ClusterError::NoCapacity => ErrorCode::NoCapacity,
            ClusterError::UnknownSession(_) => ErrorCode::UnknownSession,
            ClusterError::SessionLost(_) => ErrorCode::SessionLost,
            ClusterError::EpisodeFinished(_) => ErrorCode::EpisodeFinished,
            ClusterError::Timeout => ErrorCode::Timeout,
            ClusterError::InvalidTask(_) => ErrorCode::InvalidTask,
            ClusterError::Unavailable(_) => ErrorCode::Internal,
            ClusterError::Protocol(_) => ErrorCode::BadRequest,
        }
    }

    pub fn to_message(&self) -> WireMessage {
        let detail = match self {
            ClusterError::DuplicateLiveWorker(s)
            | ClusterError::UnknownWorker(s)
            | ClusterError::UnknownSession(s)
            | ClusterError::SessionLost(s)
            | ClusterError::EpisodeFinished(s)
            | ClusterError::InvalidTask(s)
            | ClusterError::Unavailable(s)
            | ClusterError::Protocol(s) => s.clone(),
            ClusterError::NoCapacity | ClusterError::Timeout => String::new(),
        };
        WireMessage::error(self.code(), detail)
    }

    pub fn from_wire(code: ErrorCode, message: String) -> Self {
        match code {
            ErrorCode::DuplicateLiveWorker => ClusterError::DuplicateLiveWorker(message),
            ErrorCode::UnknownWorker => ClusterError::UnknownWorker(message),
            ErrorCode::NoCapacity => ClusterError::NoCapacity,
            ErrorCode::UnknownSession => ClusterError::UnknownSession(message),
            ErrorCode::SessionLost => ClusterError::SessionLost(message),
            ErrorCode::EpisodeFinished => ClusterError::EpisodeFinished(message),
            ErrorCode::Timeout => ClusterError::Timeout,
            ErrorCode::InvalidTask => ClusterError::InvalidTask(message),
            ErrorCode::Internal => ClusterError::Unavailable(message),
            ErrorCode::BadRequest | ErrorCode::VersionMismatch => ClusterError::Protocol(message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("peer unreachable: {0}")]
    Unreachable(String),
    #[error("peer did not answer in time")]
    Timeout,
}

/// Request/response channel from the controller to workers.
pub trait Transport: Send + Sync {
    fn call(&self, address: &str, correlation_id: u64, msg: WireMessage) -> Result<WireMessage, TransportError>;
}

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

pub struct SystemClock(Instant);

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock(Instant::now())
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        self.0.elapsed().as_millis() as u64
    }
}

/// Test clock advanced by hand.
#[derive(Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn advance(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for std::sync::Arc<ManualClock> {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    pub session_id: String,
    pub slot_id: String,
    pub worker_id: String,
    pub observation: String,
}

impl Allocation {
    pub fn into_message(self) -> WireMessage {
        WireMessage::Allocated {
            session_id: self.session_id,
            slot_id: self.slot_id,
            worker_id: self.worker_id,
            observation: self.observation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReply {
    pub outcome: StepOutcome,
    /// Task accuracy, present on the final step.
    pub accuracy: Option<f64>,
}

/// What rollout code needs from a cluster, local or remote.
pub trait EnvCluster: Send + Sync {
    fn allocate(&self, task: &TaskSpec, seed: u64, space: ActionSpace, realloc_of: Option<&str>) -> Result<Allocation, ClusterError>;
    /// `correlation_id` must be unique per session; a repeat returns the first result.
    fn step(&self, session: &str, correlation_id: u64, action: &str) -> Result<StepReply, ClusterError>;
    fn release(&self, session: &str) -> Result<(), ClusterError>;
    /// Publishes trainer metrics; returns true while the operator has training paused.
    fn sync_training(&self, phase: &str, metrics: &[UpdateMetrics]) -> Result<bool, ClusterError>;
}

impl<C: EnvCluster + ?Sized> EnvCluster for std::sync::Arc<C> {
    fn allocate(&self, task: &TaskSpec, seed: u64, space: ActionSpace, realloc_of: Option<&str>) -> Result<Allocation, ClusterError> {
        (**self).allocate(task, seed, space, realloc_of)
    }
    fn step(&self, session: &str, correlation_id: u64, action: &str) -> Result<StepReply, ClusterError> {
        (**self).step(session, correlation_id, action)
    }
    fn release(&self, session: &str) -> Result<(), ClusterError> {
        (**self).release(session)
    }
    fn sync_training(&self, phase: &str, metrics: &[UpdateMetrics]) -> Result<bool, ClusterError> {
        (**self).sync_training(phase, metrics)
    }
}
