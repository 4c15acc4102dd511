//! Controller bookkeeping. Pure data; the caller supplies the clock.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::status::{Counters, SlotView, StatusReport, WorkerStatus, WorkerView};
use super::wire::PROTO_VERSION;
use super::ClusterError;
use crate::envsim::{ActionSpace, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timing {
    pub heartbeat_interval_ms: u64,
    pub heartbeat_timeout_ms: u64,
}

impl Default for Timing {
    fn default() -> Self {
        Timing { heartbeat_interval_ms: 1000, heartbeat_timeout_ms: 3000 }
    }
}

impl Timing {
    pub fn with_interval(ms: u64) -> Self {
        Timing { heartbeat_interval_ms: ms, heartbeat_timeout_ms: 3 * ms }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerInfo {
    pub worker_id: String,
    pub address: String,
    pub capacity: u32,
    pub last_heartbeat_ms: u64,
    pub status: WorkerStatus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvSlot {
    pub slot_id: String,
    pub worker_id: String,
    pub task_id: Option<String>,
    pub session_id: Option<String>,
    pub created_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecord {
    pub session_id: String,
    pub slot_id: String,
    pub worker_id: String,
    pub task: TaskSpec,
    pub seed: u64,
    pub space: ActionSpace,
    /// False until the worker confirmed the env exists.
    pub confirmed: bool,
}

/// Where a reserved session must be spawned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reservation {
    pub session_id: String,
    pub slot_id: String,
    pub worker_id: String,
    pub address: String,
}

#[derive(Debug, Clone)]
struct WorkerRecord {
    info: WorkerInfo,
    draining: bool,
    slots: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct ClusterState {
    timing: Timing,
    workers: BTreeMap<String, WorkerRecord>,
    slots: BTreeMap<String, EnvSlot>,
    sessions: HashMap<String, SessionRecord>,
    lost: HashSet<String>,
    recovered: Vec<String>,
    counters: Counters,
    next_worker: u64,
    next_session: u64,
}

impl ClusterState {
    pub fn new(timing: Timing) -> Self {
        ClusterState { timing, ..Default::default() }
    }

    pub fn timing(&self) -> Timing {
        self.timing
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn counters_mut(&mut self) -> &mut Counters {
        &mut self.counters
    }

    pub fn worker(&self, id: &str) -> Option<&WorkerInfo> {
        self.workers.get(id).map(|w| &w.info)
    }

    pub fn session(&self, id: &str) -> Option<&SessionRecord> {
        self.sessions.get(id)
    }

    pub fn is_lost(&self, session: &str) -> bool {
        self.lost.contains(session)
    }

    /// Confirmed live sessions.
    pub fn active(&self) -> u64 {
        self.sessions.values().filter(|s| s.confirmed).count() as u64
    }

    pub fn conserved(&self) -> bool {
        let c = &self.counters;
        c.allocations == c.completions + self.active() + c.lost
    }

    pub fn load(&self, worker: &str) -> u32 {
        self.workers.get(worker).map_or(0, |w| {
            w.slots.iter().filter(|s| self.slots[s.as_str()].session_id.is_some()).count() as u32
        })
    }

    pub fn register(
        &mut self,
        requested_id: Option<&str>,
        address: &str,
        capacity: u32,
        now: u64,
    ) -> Result<String, ClusterError> {
        self.refresh(now);
        let id = match requested_id {
            Some(id) => {
                if let Some(old) = self.workers.get(id) {
                    if old.info.status != WorkerStatus::Dead {
                        return Err(ClusterError::DuplicateLiveWorker(id.to_string()));
                    }
                }
                id.to_string()
            }
            None => loop {
                self.next_worker += 1;
                let id = format!("w-{:03}", self.next_worker);
                if !self.workers.contains_key(&id) {
                    break id;
                }
            },
        };
        if let Some(old) = self.workers.remove(&id) {
            for s in old.slots {
                self.slots.remove(&s);
            }
        }
        let slots: Vec<String> = (0..capacity).map(|i| format!("{id}/{i:02}")).collect();
        for s in &slots {
            self.slots.insert(
                s.clone(),
                EnvSlot { slot_id: s.clone(), worker_id: id.clone(), task_id: None, session_id: None, created_at_ms: now },
            );
        }
        let info = WorkerInfo {
            worker_id: id.clone(),
            address: address.to_string(),
            capacity,
            last_heartbeat_ms: now,
            status: WorkerStatus::Alive,
        };
        self.workers.insert(id.clone(), WorkerRecord { info, draining: false, slots });
        Ok(id)
    }

    pub fn heartbeat(&mut self, worker: &str, now: u64) -> Result<(), ClusterError> {
        self.refresh(now);
        match self.workers.get_mut(worker) {
            Some(w) if w.info.status != WorkerStatus::Dead => {
                w.info.last_heartbeat_ms = now;
                w.info.status = WorkerStatus::Alive;
                Ok(())
            }
            _ => Err(ClusterError::UnknownWorker(worker.to_string())),
        }
    }

    pub fn drain(&mut self, worker: &str) -> Result<(), ClusterError> {
        let w = self.workers.get_mut(worker).ok_or_else(|| ClusterError::UnknownWorker(worker.to_string()))?;
        w.draining = true;
        Ok(())
    }

    /// Re-derives worker liveness from heartbeat age. Death is sticky until re-registration.
    pub fn refresh(&mut self, now: u64) {
        let t = self.timing;
        let mut died = vec![];
        for (id, w) in &mut self.workers {
            if w.info.status == WorkerStatus::Dead {
                continue;
            }
            let age = now.saturating_sub(w.info.last_heartbeat_ms);
            if age > t.heartbeat_timeout_ms {
                died.push(id.clone());
            } else if age > 2 * t.heartbeat_interval_ms {
                w.info.status = WorkerStatus::Suspect;
            }
        }
        for id in died {
            self.mark_dead(&id);
        }
    }

    /// Declares a worker dead now, losing every session it hosted.
    pub fn mark_dead(&mut self, worker: &str) {
        let Some(w) = self.workers.get_mut(worker) else { return };
        if w.info.status == WorkerStatus::Dead {
            return;
        }
        w.info.status = WorkerStatus::Dead;
        self.counters.failures += 1;
        let doomed: Vec<String> =
            w.slots.iter().filter_map(|s| self.slots[s.as_str()].session_id.clone()).collect();
        for session in doomed {
            self.lose(&session);
        }
    }

    /// Marks one session lost, freeing its slot. Returns its task id.
    pub fn lose(&mut self, session: &str) -> Option<String> {
        let rec = self.sessions.remove(session)?;
        self.free_slot(&rec.slot_id);
        self.lost.insert(session.to_string());
        if rec.confirmed {
            self.counters.lost += 1;
            self.recovered.push(rec.task.task_id.clone());
        }
        Some(rec.task.task_id)
    }

    /// Marks every session lost, as on controller shutdown. Returns how many there were.
    pub fn lose_all(&mut self) -> usize {
        let mut ids: Vec<String> = self.sessions.keys().cloned().collect();
        ids.sort();
        for s in &ids {
            self.lose(s);
        }
        ids.len()
    }

    /// Task ids of sessions lost since the previous call.
    pub fn reap(&mut self, now: u64) -> Vec<String> {
        self.refresh(now);
        std::mem::take(&mut self.recovered)
    }

    /// Picks the least-loaded alive worker (lowest id on ties) and binds its lowest idle slot.
    pub fn reserve(&mut self, task: &TaskSpec, seed: u64, space: ActionSpace, now: u64) -> Result<Reservation, ClusterError> {
        self.refresh(now);
        let mut best: Option<(u32, &str)> = None;
        for (id, w) in &self.workers {
            if w.info.status != WorkerStatus::Alive || w.draining {
                continue;
            }
            let load = self.load(id);
            if load >= w.info.capacity {
                continue;
            }
            if best.is_none_or(|(l, _)| load < l) {
                best = Some((load, id));
            }
        }
        let worker = best.ok_or(ClusterError::NoCapacity)?.1.to_string();
        let slot_id = self.workers[&worker]
            .slots
            .iter()
            .find(|s| self.slots[s.as_str()].session_id.is_none())
            .cloned()
            .expect("load below capacity");
        self.next_session += 1;
        let session_id = format!("s-{:06}", self.next_session);
        self.bind(&slot_id, &session_id, &task.task_id, now);
        self.sessions.insert(
            session_id.clone(),
            SessionRecord {
                session_id: session_id.clone(),
                slot_id: slot_id.clone(),
                worker_id: worker.clone(),
                task: task.clone(),
                seed,
                space,
                confirmed: false,
            },
        );
        let address = self.workers[&worker].info.address.clone();
        Ok(Reservation { session_id, slot_id, worker_id: worker, address })
    }

    /// The worker built the env: the allocation now counts.
    pub fn confirm(&mut self, session: &str, realloc_of: Option<&str>) -> Result<(), ClusterError> {
        let rec = self.sessions.get_mut(session).ok_or_else(|| ClusterError::SessionLost(session.to_string()))?;
        rec.confirmed = true;
        self.counters.allocations += 1;
        if realloc_of.is_some_and(|old| self.lost.contains(old) || !self.sessions.contains_key(old)) {
            self.counters.reallocations += 1;
        }
        Ok(())
    }

    /// Drops a reservation the worker could not honor.
    pub fn cancel(&mut self, session: &str) {
        if let Some(rec) = self.sessions.remove(session) {
            debug_assert!(!rec.confirmed);
            self.free_slot(&rec.slot_id);
        }
    }

    /// Normal end of a session.
    pub fn complete(&mut self, session: &str) -> Result<SessionRecord, ClusterError> {
        if self.lost.contains(session) {
            return Err(ClusterError::SessionLost(session.to_string()));
        }
        let rec = self.sessions.remove(session).ok_or_else(|| ClusterError::UnknownSession(session.to_string()))?;
        self.free_slot(&rec.slot_id);
        if rec.confirmed {
            self.counters.completions += 1;
        }
        Ok(rec)
    }

    /// Reissues a live session under a new id on the same slot, unconfirmed.
    pub fn replace(&mut self, session: &str, now: u64) -> Result<(SessionRecord, Reservation), ClusterError> {
        let old = self.complete(session)?;
        self.next_session += 1;
        let session_id = format!("s-{:06}", self.next_session);
        self.bind(&old.slot_id, &session_id, &old.task.task_id, now);
        let mut rec = old.clone();
        rec.session_id = session_id.clone();
        rec.confirmed = false;
        self.sessions.insert(session_id.clone(), rec);
        let address = self.workers[&old.worker_id].info.address.clone();
        Ok((old.clone(), Reservation { session_id, slot_id: old.slot_id, worker_id: old.worker_id, address }))
    }

    fn bind(&mut self, slot: &str, session: &str, task: &str, now: u64) {
        let s = self.slots.get_mut(slot).expect("slot exists");
        s.session_id = Some(session.to_string());
        s.task_id = Some(task.to_string());
        s.created_at_ms = now;
    }

    fn free_slot(&mut self, slot: &str) {
        if let Some(s) = self.slots.get_mut(slot) {
            s.session_id = None;
            s.task_id = None;
        }
    }

    /// Sessions on workers that are not dead must sit on alive-or-suspect workers; dead ones hold none.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen = HashSet::new();
        let mut alive_capacity = 0u64;
        let mut bound = 0u64;
        for w in self.workers.values() {
            let load = self.load(&w.info.worker_id);
            if w.info.status == WorkerStatus::Dead && load > 0 {
                return Err(format!("dead worker {} holds {load} slots", w.info.worker_id));
            }
            if w.info.status != WorkerStatus::Dead {
                alive_capacity += u64::from(w.info.capacity);
            }
            bound += u64::from(load);
        }
        if bound > alive_capacity {
            return Err("more bound slots than live capacity".into());
        }
        for slot in self.slots.values() {
            if let Some(s) = &slot.session_id {
                if !seen.insert(s.clone()) {
                    return Err(format!("session {s} bound twice"));
                }
                if !self.sessions.contains_key(s) {
                    return Err(format!("slot {} bound to unknown session", slot.slot_id));
                }
            }
        }
        if seen.len() != self.sessions.len() {
            return Err("session without slot".into());
        }
        if !self.conserved() {
            return Err(format!("conservation broken: {:?} active={}", self.counters, self.active()));
        }
        Ok(())
    }

    pub fn snapshot(&self, now: u64) -> StatusReport {
        let workers = self
            .workers
            .values()
            .map(|w| WorkerView {
                worker_id: w.info.worker_id.clone(),
                address: w.info.address.clone(),
                capacity: w.info.capacity,
                load: self.load(&w.info.worker_id),
                status: w.info.status,
                draining: w.draining,
                heartbeat_age_ms: now.saturating_sub(w.info.last_heartbeat_ms),
            })
            .collect::<Vec<_>>();
        let capacity = workers.iter().filter(|w| w.status != WorkerStatus::Dead).map(|w| u64::from(w.capacity)).sum();
        let slots = self
            .slots
            .values()
            .filter(|s| self.workers.get(&s.worker_id).is_some_and(|w| w.info.status != WorkerStatus::Dead))
            .map(|s| SlotView {
                slot_id: s.slot_id.clone(),
                worker_id: s.worker_id.clone(),
                task_id: s.task_id.clone(),
                session_id: s.session_id.clone(),
                age_ms: if s.session_id.is_some() { now.saturating_sub(s.created_at_ms) } else { 0 },
            })
            .collect();
        StatusReport {
            proto_version: PROTO_VERSION,
            workers,
            slots,
            active_sessions: self.active(),
            capacity,
            counters: self.counters.clone(),
            ..Default::default()
        }
    }
}
