//! Env host run by each worker. Transport-agnostic: it consumes and produces wire messages.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;

use super::wire::{ErrorCode, WireMessage};
use crate::envsim::{Action, ActionSpace, ApiTable, Env, EnvError, TaskSpec};

struct Hosted {
    slot_id: String,
    env: Env,
    /// Last applied correlation id and its reply.
    last: Option<(u64, WireMessage)>,
    applied: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HostCounters {
    pub spawned: u64,
    pub applied_steps: u64,
    /// Retries answered without touching the env.
    pub replayed_steps: u64,
}

pub struct WorkerHost {
    capacity: u32,
    apis: Arc<ApiTable>,
    envs: Mutex<HashMap<String, Arc<Mutex<Hosted>>>>,
    spawned: AtomicU64,
    applied: AtomicU64,
    replayed: AtomicU64,
}

impl WorkerHost {
    pub fn new(capacity: u32, apis: Arc<ApiTable>) -> Self {
        WorkerHost {
            capacity,
            apis,
            envs: Mutex::new(HashMap::new()),
            spawned: AtomicU64::new(0),
            applied: AtomicU64::new(0),
            replayed: AtomicU64::new(0),
        }
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    pub fn active(&self) -> u32 {
        self.envs.lock().len() as u32
    }

    pub fn counters(&self) -> HostCounters {
        HostCounters {
            spawned: self.spawned.load(Ordering::Relaxed),
            applied_steps: self.applied.load(Ordering::Relaxed),
            replayed_steps: self.replayed.load(Ordering::Relaxed),
        }
    }

    /// Env step count of a hosted session.
    pub fn env_steps(&self, session: &str) -> Option<u64> {
        let h = self.envs.lock().get(session).cloned()?;
        let h = h.lock();
        Some(h.applied)
    }

    /// Drops every env, as a process exit would.
    pub fn clear(&self) {
        self.envs.lock().clear();
    }

    pub fn handle(&self, correlation_id: u64, msg: WireMessage) -> WireMessage {
        match msg {
            WireMessage::Spawn { session_id, slot_id, task, seed, space } => {
                self.spawn(session_id, slot_id, &task, seed, space)
            }
            WireMessage::Step { session_id, action } => self.step(&session_id, correlation_id, &action),
            WireMessage::Release { session_id } => {
                self.envs.lock().remove(&session_id);
                WireMessage::Ack
            }
            other => WireMessage::error(ErrorCode::BadRequest, format!("worker cannot handle `{}`", other.kind())),
        }
    }

    fn spawn(&self, session_id: String, slot_id: String, task: &TaskSpec, seed: u64, space: ActionSpace) -> WireMessage {
        let mut envs = self.envs.lock();
        if envs.contains_key(&session_id) {
            return WireMessage::error(ErrorCode::BadRequest, format!("session {session_id} already hosted"));
        }
        if envs.values().any(|h| h.lock().slot_id == slot_id) {
            return WireMessage::error(ErrorCode::BadRequest, format!("slot {slot_id} busy"));
        }
        if envs.len() as u32 >= self.capacity {
            return WireMessage::error(ErrorCode::NoCapacity, "worker full");
        }
        let env = match Env::new(task, seed, space, self.apis.clone()) {
            Ok(e) => e,
            Err(e) => return WireMessage::error(ErrorCode::InvalidTask, e.to_string()),
        };
        let observation = env.observation();
        envs.insert(session_id.clone(), Arc::new(Mutex::new(Hosted { slot_id: slot_id.clone(), env, last: None, applied: 0 })));
        self.spawned.fetch_add(1, Ordering::Relaxed);
        WireMessage::Allocated { session_id, slot_id, worker_id: String::new(), observation }
    }

    fn step(&self, session: &str, correlation_id: u64, raw: &str) -> WireMessage {
        let Some(hosted) = self.envs.lock().get(session).cloned() else {
            return WireMessage::error(ErrorCode::UnknownSession, session.to_string());
        };
        let mut h = hosted.lock();
        if let Some((id, reply)) = &h.last {
            if *id == correlation_id {
                self.replayed.fetch_add(1, Ordering::Relaxed);
                return reply.clone();
            }
        }
        let reply = match h.env.step(&Action::from_text(raw)) {
            Ok(outcome) => {
                let accuracy = outcome.done.then(|| h.env.verify());
                WireMessage::StepResult { outcome, accuracy }
            }
            Err(EnvError::EpisodeFinished) => return WireMessage::error(ErrorCode::EpisodeFinished, session.to_string()),
            Err(e) => return WireMessage::error(ErrorCode::Internal, e.to_string()),
        };
        h.applied += 1;
        self.applied.fetch_add(1, Ordering::Relaxed);
        h.last = Some((correlation_id, reply.clone()));
        reply
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsim::{task_suite, SuiteProfile};

    fn spawn(host: &WorkerHost, session: &str, slot: &str) -> WireMessage {
        let task = task_suite(SuiteProfile::Smoke).remove(0);
        host.handle(
            0,
            WireMessage::Spawn { session_id: session.into(), slot_id: slot.into(), task, seed: 1, space: ActionSpace::ApiGui },
        )
    }

    #[test]
    fn duplicate_correlation_steps_env_once() {
        let host = WorkerHost::new(2, Arc::new(ApiTable::builtin()));
        assert!(matches!(spawn(&host, "s1", "w/00"), WireMessage::Allocated { .. }));
        let step = || WireMessage::Step { session_id: "s1".into(), action: "SCROLL(1)".into() };
        let first = host.handle(7, step());
        for _ in 0..5 {
            assert_eq!(host.handle(7, step()), first);
        }
        assert_eq!(host.env_steps("s1"), Some(1));
        host.handle(8, step());
        assert_eq!(host.env_steps("s1"), Some(2));
        assert_eq!(host.counters().replayed_steps, 5);
    }

    #[test]
    fn capacity_and_unknown_session() {
        let host = WorkerHost::new(1, Arc::new(ApiTable::builtin()));
        spawn(&host, "s1", "w/00");
        assert!(matches!(spawn(&host, "s2", "w/01"), WireMessage::Error { code: ErrorCode::NoCapacity, .. }));
        let r = host.handle(1, WireMessage::Step { session_id: "nope".into(), action: "DONE".into() });
        assert!(matches!(r, WireMessage::Error { code: ErrorCode::UnknownSession, .. }));
    }

    #[test]
    fn final_step_reports_accuracy() {
        let host = WorkerHost::new(1, Arc::new(ApiTable::builtin()));
        spawn(&host, "s1", "w/00");
        match host.handle(1, WireMessage::Step { session_id: "s1".into(), action: "DONE".into() }) {
            WireMessage::StepResult { outcome, accuracy } => {
                assert!(outcome.done);
                assert!(accuracy.unwrap() < 1.0);
            }
            other => panic!("{other:?}"),
        }
        let again = host.handle(2, WireMessage::Step { session_id: "s1".into(), action: "DONE".into() });
        assert!(matches!(again, WireMessage::Error { code: ErrorCode::EpisodeFinished, .. }));
    }
}
