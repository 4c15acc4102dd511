//! In-process cluster: real controller logic, workers reached by direct calls.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use parking_lot::RwLock;

use super::{Allocation, Clock, ClusterError, Controller, EnvCluster, StepReply, SystemClock, Timing, Transport, TransportError, WireMessage, WorkerHost};
use crate::envsim::{ActionSpace, ApiTable, TaskSpec};
use crate::grpo::UpdateMetrics;

#[derive(Default)]
pub struct LocalTransport {
    hosts: RwLock<HashMap<String, (Arc<WorkerHost>, bool)>>,
}

impl LocalTransport {
    pub fn add(&self, address: &str, host: Arc<WorkerHost>) {
        self.hosts.write().insert(address.to_string(), (host, true));
    }

    /// Simulates a process kill: the host forgets its envs and stops answering.
    pub fn kill(&self, address: &str) {
        if let Some((host, alive)) = self.hosts.write().get_mut(address) {
            *alive = false;
            host.clear();
        }
    }

    pub fn is_alive(&self, address: &str) -> bool {
        self.hosts.read().get(address).is_some_and(|(_, a)| *a)
    }

    pub fn host(&self, address: &str) -> Option<Arc<WorkerHost>> {
        self.hosts.read().get(address).map(|(h, _)| h.clone())
    }
}

impl Transport for LocalTransport {
    fn call(&self, address: &str, correlation_id: u64, msg: WireMessage) -> Result<WireMessage, TransportError> {
        let host = match self.hosts.read().get(address) {
            Some((h, true)) => h.clone(),
            _ => return Err(TransportError::Unreachable(address.to_string())),
        };
        Ok(host.handle(correlation_id, msg))
    }
}

/// Controller plus `n` in-process workers, with a background heartbeat and reaper.
pub struct LocalCluster {
    controller: Arc<Controller<LocalTransport>>,
    workers: Vec<(String, String)>,
    stop: Arc<AtomicBool>,
    pump: Option<JoinHandle<()>>,
}

impl LocalCluster {
    pub fn start(workers: usize, slots: u32, timing: Timing, apis: Arc<ApiTable>) -> Self {
        Self::with_clock(workers, slots, timing, apis, Box::new(SystemClock::default()), true)
    }

    /// `pump` false leaves heartbeats and reaping to the caller.
    pub fn with_clock(workers: usize, slots: u32, timing: Timing, apis: Arc<ApiTable>, clock: Box<dyn Clock>, pump: bool) -> Self {
        let controller = Arc::new(Controller::new(timing, LocalTransport::default(), clock));
        let mut ids = vec![];
        for i in 0..workers {
            let address = format!("local:{i}");
            controller.transport().add(&address, Arc::new(WorkerHost::new(slots, apis.clone())));
            let id = controller.register_worker(None, &address, slots).expect("fresh worker registers");
            ids.push((id, address));
        }
        let stop = Arc::new(AtomicBool::new(false));
        let pump = pump.then(|| {
            let (c, w, s) = (controller.clone(), ids.clone(), stop.clone());
            std::thread::spawn(move || heartbeat_pump(c, w, s))
        });
        LocalCluster { controller, workers: ids, stop, pump }
    }

    pub fn controller(&self) -> &Arc<Controller<LocalTransport>> {
        &self.controller
    }

    pub fn worker_ids(&self) -> Vec<String> {
        self.workers.iter().map(|(id, _)| id.clone()).collect()
    }

    fn address(&self, worker: &str) -> Option<&str> {
        self.workers.iter().find(|(id, _)| id == worker).map(|(_, a)| a.as_str())
    }

    pub fn host(&self, worker: &str) -> Option<Arc<WorkerHost>> {
        self.controller.transport().host(self.address(worker)?)
    }

    pub fn kill_worker(&self, worker: &str) {
        if let Some(a) = self.address(worker) {
            self.controller.transport().kill(a);
        }
    }

    /// One manual heartbeat round from every live worker.
    pub fn heartbeat_all(&self) {
        beat(&self.controller, &self.workers);
    }
}

fn beat(c: &Controller<LocalTransport>, workers: &[(String, String)]) {
    for (id, address) in workers {
        if c.transport().is_alive(address) {
            let _ = c.heartbeat(id);
        }
    }
}

fn heartbeat_pump(c: Arc<Controller<LocalTransport>>, workers: Vec<(String, String)>, stop: Arc<AtomicBool>) {
    let interval = Duration::from_millis(c.timing().heartbeat_interval_ms.max(1));
    while !stop.load(Ordering::Relaxed) {
        beat(&c, &workers);
        c.reap_and_reallocate();
        std::thread::sleep(interval / 2);
    }
}

impl Drop for LocalCluster {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.pump.take() {
            let _ = h.join();
        }
    }
}

impl EnvCluster for LocalCluster {
    fn allocate(&self, task: &TaskSpec, seed: u64, space: ActionSpace, realloc_of: Option<&str>) -> Result<Allocation, ClusterError> {
        self.controller.allocate_task(task, seed, space, realloc_of)
    }

    fn step(&self, session: &str, correlation_id: u64, action: &str) -> Result<StepReply, ClusterError> {
        self.controller.route_step(session, correlation_id, action)
    }

    fn release(&self, session: &str) -> Result<(), ClusterError> {
        self.controller.release_session(session)
    }

    fn sync_training(&self, phase: &str, metrics: &[UpdateMetrics]) -> Result<bool, ClusterError> {
        Ok(self.controller.trainer_sync(phase, metrics))
    }
}
