use std::collections::HashMap;

use parking_lot::Mutex;

use super::state::{ClusterState, Timing};
use super::status::{StatusReport, TrainingView};
use super::wire::{ErrorCode, WireMessage};
use super::{Allocation, Clock, ClusterError, EnvCluster, StepReply, Transport, TransportError};
use crate::envsim::{ActionSpace, TaskSpec};
use crate::grpo::UpdateMetrics;

#[derive(Debug, Default)]
struct Training {
    phase: Option<String>,
    paused: bool,
    metrics: Vec<UpdateMetrics>,
}

/// The single writer of [`ClusterState`]. Worker calls happen outside the state lock.
pub struct Controller<T> {
    state: Mutex<ClusterState>,
    cache: Mutex<HashMap<String, HashMap<u64, StepReply>>>,
    training: Mutex<Training>,
    transport: T,
    clock: Box<dyn Clock>,
}

impl<T: Transport> Controller<T> {
    pub fn new(timing: Timing, transport: T, clock: Box<dyn Clock>) -> Self {
        Controller {
            state: Mutex::new(ClusterState::new(timing)),
            cache: Mutex::new(HashMap::new()),
            training: Mutex::new(Training::default()),
            transport,
            clock,
        }
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    pub fn now(&self) -> u64 {
        self.clock.now_ms()
    }

    pub fn timing(&self) -> Timing {
        self.state.lock().timing()
    }

    /// Runs `f` against a consistent view of the state.
    pub fn inspect<R>(&self, f: impl FnOnce(&ClusterState) -> R) -> R {
        f(&self.state.lock())
    }

    pub fn register_worker(&self, worker_id: Option<&str>, address: &str, capacity: u32) -> Result<String, ClusterError> {
        let now = self.now();
        self.state.lock().register(worker_id, address, capacity, now)
    }

    pub fn heartbeat(&self, worker_id: &str) -> Result<(), ClusterError> {
        let now = self.now();
        self.state.lock().heartbeat(worker_id, now)
    }

    pub fn drain_worker(&self, worker_id: &str) -> Result<(), ClusterError> {
        self.state.lock().drain(worker_id)
    }

    /// Periodic sweep: marks silent workers dead and returns the task ids of their lost sessions.
    pub fn reap_and_reallocate(&self) -> Vec<String> {
        let now = self.now();
        let recovered = self.state.lock().reap(now);
        self.prune_cache();
        recovered
    }

    pub fn allocate_task(
        &self,
        task: &TaskSpec,
        seed: u64,
        space: ActionSpace,
        realloc_of: Option<&str>,
    ) -> Result<Allocation, ClusterError> {
        loop {
            let now = self.now();
            let res = self.state.lock().reserve(task, seed, space, now)?;
            let spawn = WireMessage::Spawn {
                session_id: res.session_id.clone(),
                slot_id: res.slot_id.clone(),
                task: task.clone(),
                seed,
                space,
            };
            match self.transport.call(&res.address, 0, spawn) {
                Ok(WireMessage::Allocated { observation, .. }) => {
                    self.state.lock().confirm(&res.session_id, realloc_of)?;
                    return Ok(Allocation {
                        session_id: res.session_id,
                        slot_id: res.slot_id,
                        worker_id: res.worker_id,
                        observation,
                    });
                }
                Ok(WireMessage::Error { code: ErrorCode::InvalidTask, message }) => {
                    self.state.lock().cancel(&res.session_id);
                    return Err(ClusterError::InvalidTask(message));
                }
                Ok(WireMessage::Error { code, message }) => {
                    self.state.lock().cancel(&res.session_id);
                    return Err(ClusterError::Protocol(format!("spawn refused ({code:?}): {message}")));
                }
                Ok(other) => {
                    self.state.lock().cancel(&res.session_id);
                    return Err(ClusterError::Protocol(format!("spawn answered with `{}`", other.kind())));
                }
                Err(_) => {
                    // The worker is gone; try the next one.
                    let mut st = self.state.lock();
                    st.cancel(&res.session_id);
                    st.mark_dead(&res.worker_id);
                }
            }
        }
    }

    pub fn route_step(&self, session: &str, correlation_id: u64, action: &str) -> Result<StepReply, ClusterError> {
        let address = {
            let mut st = self.state.lock();
            st.refresh(self.now());
            if st.is_lost(session) {
                return Err(ClusterError::SessionLost(session.to_string()));
            }
            let rec = st.session(session).ok_or_else(|| ClusterError::UnknownSession(session.to_string()))?;
            let worker = rec.worker_id.clone();
            if let Some(hit) = self.cache.lock().get(session).and_then(|c| c.get(&correlation_id)).cloned() {
                st.counters_mut().cache_hits += 1;
                return Ok(hit);
            }
            st.worker(&worker).expect("session worker exists").address.clone()
        };
        let msg = WireMessage::Step { session_id: session.to_string(), action: action.to_string() };
        match self.transport.call(&address, correlation_id, msg) {
            Ok(WireMessage::StepResult { outcome, accuracy }) => {
                let reply = StepReply { outcome, accuracy };
                let mut st = self.state.lock();
                if st.session(session).is_none() {
                    // Lost while the step was in flight: the result must not be used.
                    return Err(ClusterError::SessionLost(session.to_string()));
                }
                st.counters_mut().steps += 1;
                self.cache.lock().entry(session.to_string()).or_default().insert(correlation_id, reply.clone());
                Ok(reply)
            }
            Ok(WireMessage::Error { code: ErrorCode::EpisodeFinished, .. }) => {
                Err(ClusterError::EpisodeFinished(session.to_string()))
            }
            Ok(WireMessage::Error { code: ErrorCode::UnknownSession, .. }) => {
                self.state.lock().lose(session);
                Err(ClusterError::SessionLost(session.to_string()))
            }
            Ok(other) => Err(ClusterError::Protocol(format!("step answered with `{}`", other.kind()))),
            Err(TransportError::Timeout) => Err(ClusterError::Timeout),
            Err(TransportError::Unreachable(_)) => {
                let mut st = self.state.lock();
                if let Some(worker) = st.session(session).map(|s| s.worker_id.clone()) {
                    st.mark_dead(&worker);
                }
                Err(ClusterError::SessionLost(session.to_string()))
            }
        }
    }

    pub fn release_session(&self, session: &str) -> Result<(), ClusterError> {
        let address = {
            let st = self.state.lock();
            if st.is_lost(session) {
                return Ok(());
            }
            let rec = st.session(session).ok_or_else(|| ClusterError::UnknownSession(session.to_string()))?;
            st.worker(&rec.worker_id).map(|w| w.address.clone())
        };
        // The worker drops the env before the slot is handed out again.
        if let Some(addr) = address {
            // Best effort: a dead worker has already dropped the env.
            let _ = self.transport.call(&addr, 0, WireMessage::Release { session_id: session.to_string() });
        }
        match self.state.lock().complete(session) {
            Ok(_) | Err(ClusterError::SessionLost(_)) => {}
            Err(e) => return Err(e),
        }
        self.cache.lock().remove(session);
        Ok(())
    }

    /// Restarts a live session's env from its initial state under a new session id.
    pub fn reset_session(&self, session: &str) -> Result<Allocation, ClusterError> {
        let now = self.now();
        let (old, res) = self.state.lock().replace(session, now)?;
        self.cache.lock().remove(session);
        let _ = self.transport.call(&res.address, 0, WireMessage::Release { session_id: session.to_string() });
        let spawn = WireMessage::Spawn {
            session_id: res.session_id.clone(),
            slot_id: res.slot_id.clone(),
            task: old.task.clone(),
            seed: old.seed,
            space: old.space,
        };
        match self.transport.call(&res.address, 0, spawn) {
            Ok(WireMessage::Allocated { observation, .. }) => {
                self.state.lock().confirm(&res.session_id, Some(session))?;
                Ok(Allocation { session_id: res.session_id, slot_id: res.slot_id, worker_id: res.worker_id, observation })
            }
            _ => {
                let mut st = self.state.lock();
                st.cancel(&res.session_id);
                st.mark_dead(&res.worker_id);
                Err(ClusterError::SessionLost(session.to_string()))
            }
        }
    }

    pub fn pause(&self) {
        self.training.lock().paused = true;
    }

    pub fn resume(&self) {
        self.training.lock().paused = false;
    }

    /// Records trainer metrics and returns whether training is paused.
    pub fn trainer_sync(&self, phase: &str, metrics: &[UpdateMetrics]) -> bool {
        let mut t = self.training.lock();
        t.phase = Some(phase.to_string());
        t.metrics.extend_from_slice(metrics);
        t.paused
    }

    pub fn metrics(&self) -> Vec<UpdateMetrics> {
        self.training.lock().metrics.clone()
    }

    /// Marks all sessions lost; their next step or release reports `SessionLost`.
    pub fn shutdown(&self) -> usize {
        self.state.lock().lose_all()
    }

    pub fn snapshot_status(&self) -> StatusReport {
        let now = self.now();
        let mut report = {
            let mut st = self.state.lock();
            st.refresh(now);
            st.snapshot(now)
        };
        let t = self.training.lock();
        report.training = TrainingView { phase: t.phase.clone(), paused: t.paused, updates: t.metrics.len() as u64 };
        report.metrics = t.metrics.clone();
        report
    }

    /// Serves one request from a client or worker connection.
    pub fn handle(&self, correlation_id: u64, msg: WireMessage) -> WireMessage {
        let result = match msg {
            WireMessage::Register { address, capacity, worker_id } => self
                .register_worker(worker_id.as_deref(), &address, capacity)
                .map(|worker_id| WireMessage::Registered { worker_id }),
            WireMessage::Heartbeat { worker_id, .. } => self.heartbeat(&worker_id).map(|_| WireMessage::Ack),
            WireMessage::Allocate { task, seed, space, realloc_of } => {
                self.allocate_task(&task, seed, space, realloc_of.as_deref()).map(Allocation::into_message)
            }
            WireMessage::Step { session_id, action } => self
                .route_step(&session_id, correlation_id, &action)
                .map(|r| WireMessage::StepResult { outcome: r.outcome, accuracy: r.accuracy }),
            WireMessage::Reset { session_id } => self.reset_session(&session_id).map(Allocation::into_message),
            WireMessage::Release { session_id } => self.release_session(&session_id).map(|_| WireMessage::Ack),
            WireMessage::StatusQuery => Ok(WireMessage::StatusReport { report: self.snapshot_status() }),
            WireMessage::Drain { worker_id } => self.drain_worker(&worker_id).map(|_| WireMessage::Ack),
            WireMessage::TrainerSync { phase, metrics } => {
                Ok(WireMessage::TrainerControl { paused: self.trainer_sync(&phase, &metrics) })
            }
            other => Err(ClusterError::Protocol(format!("controller cannot handle `{}`", other.kind()))),
        };
        result.unwrap_or_else(|e| e.to_message())
    }

    fn prune_cache(&self) {
        let st = self.state.lock();
        self.cache.lock().retain(|s, _| st.session(s).is_some());
    }
}

impl<T: Transport> EnvCluster for Controller<T> {
    fn allocate(&self, task: &TaskSpec, seed: u64, space: ActionSpace, realloc_of: Option<&str>) -> Result<Allocation, ClusterError> {
        self.allocate_task(task, seed, space, realloc_of)
    }

    fn step(&self, session: &str, correlation_id: u64, action: &str) -> Result<StepReply, ClusterError> {
        self.route_step(session, correlation_id, action)
    }

    fn release(&self, session: &str) -> Result<(), ClusterError> {
        self.release_session(session)
    }

    fn sync_training(&self, phase: &str, metrics: &[UpdateMetrics]) -> Result<bool, ClusterError> {
        Ok(self.trainer_sync(phase, metrics))
    }
}
