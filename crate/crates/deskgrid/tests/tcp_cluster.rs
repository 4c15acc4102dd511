use std::sync::Arc;
use std::time::{Duration, Instant};

use deskgrid::commands::{start_worker, CliError, ControllerService};
use deskgrid::config::RunConfig;
use deskgrid::net::{RemoteCluster, WorkerServer};
use deskgrid_core::cluster::{ClusterError, EnvCluster};
use deskgrid_core::envsim::{task_suite, ActionSpace, ApiTable, SuiteProfile};
use deskgrid_core::policy::{Featurizer, LinearPolicy};
use deskgrid_core::rollout::{run_episode, Actor, EpisodeSpec, PolicyAgent};

fn config() -> RunConfig {
    let mut c = RunConfig::default();
    c.cluster.bind = "127.0.0.1:0".into();
    c.cluster.http_bind = "127.0.0.1:0".into();
    c.cluster.heartbeat_ms = 50;
    c.cluster.heartbeat_timeout_ms = 200;
    c
}

struct Rig {
    svc: ControllerService,
    workers: Vec<WorkerServer>,
    cfg: RunConfig,
}

impl Rig {
    fn new(workers: usize, slots: u32) -> Rig {
        let mut cfg = config();
        cfg.cluster.slots = slots;
        let svc = ControllerService::start(&cfg).unwrap();
        cfg.cluster.controller = Some(svc.wire.local_addr().to_string());
        let workers = (0..workers).map(|_| start_worker(&cfg, "127.0.0.1:0", None).unwrap()).collect();
        Rig { svc, workers, cfg }
    }

    fn client(&self) -> RemoteCluster {
        RemoteCluster::new(self.cfg.cluster.controller.as_deref().unwrap(), Duration::from_secs(5))
    }
}

fn wait_until(limit: Duration, mut f: impl FnMut() -> bool) -> bool {
    let t = Instant::now();
    while t.elapsed() < limit {
        if f() {
            return true;
        }
        std::thread::sleep(Duration::from_millis(10));
    }
    false
}

#[test]
fn workers_add_their_slots_to_capacity() {
    let rig = Rig::new(2, 16);
    let status = rig.client().status().unwrap();
    assert_eq!(status.capacity, 32);
    assert_eq!(status.workers.len(), 2);
    assert_eq!(status.active_sessions, 0);
}

#[test]
fn episode_over_tcp_matches_in_process_episode() {
    let rig = Rig::new(2, 4);
    let remote = rig.client();
    let local = deskgrid_core::cluster::LocalCluster::start(1, 4, rig.cfg.timing(), Arc::new(ApiTable::builtin()));
    let p = LinearPolicy::<f64>::zeros(1 << 12);
    let agent = PolicyAgent::sampling(&p, Featurizer::new(1 << 12));
    for task in task_suite(SuiteProfile::Smoke).iter().take(4) {
        let spec = EpisodeSpec { task, space: ActionSpace::ApiGui, seed: 5 };
        let a = run_episode(&remote, spec, &Actor::Single(&agent)).unwrap();
        let b = run_episode(&local, spec, &Actor::Single(&agent)).unwrap();
        assert_eq!(a, b);
    }
    let s = remote.status().unwrap();
    assert_eq!(s.active_sessions, 0);
    assert_eq!(s.counters.allocations, s.counters.completions + s.counters.lost);
}

#[test]
fn repeated_correlation_id_is_applied_once() {
    let rig = Rig::new(1, 2);
    let c = rig.client();
    let task = &task_suite(SuiteProfile::Smoke)[0];
    let a = c.allocate(task, 1, ActionSpace::ApiGui, None).unwrap();
    let first = c.step(&a.session_id, 77, "SCROLL(1)").unwrap();
    let again = c.step(&a.session_id, 77, "SCROLL(1)").unwrap();
    assert_eq!(first, again);
    let host = &rig.workers[0].host;
    assert_eq!(host.env_steps(&a.session_id), Some(1));
    assert!(c.status().unwrap().counters.cache_hits >= 1);
}

#[test]
fn killed_worker_sessions_are_lost_and_reallocated() {
    let mut rig = Rig::new(2, 2);
    let c = rig.client();
    let task = &task_suite(SuiteProfile::Smoke)[0];
    let allocs: Vec<_> = (0..4).map(|i| c.allocate(task, i, ActionSpace::ApiGui, None).unwrap()).collect();
    let victim = rig.workers[0].worker_id.clone();
    rig.workers[0].kill();
    let on_victim: Vec<_> = allocs.iter().filter(|a| a.worker_id == victim).collect();
    assert_eq!(on_victim.len(), 2);
    assert!(wait_until(Duration::from_millis(2 * rig.cfg.cluster.heartbeat_timeout_ms), || {
        c.status().unwrap().counters.lost == 2
    }));
    for a in on_victim {
        assert!(matches!(c.step(&a.session_id, 1, "DONE"), Err(ClusterError::SessionLost(_))));
    }
    // The survivor's slots are full, so reallocation must wait for a release.
    let survivors: Vec<_> = allocs.iter().filter(|a| a.worker_id != victim).collect();
    assert!(matches!(c.allocate(task, 9, ActionSpace::ApiGui, Some("s")), Err(ClusterError::NoCapacity)));
    c.release(&survivors[0].session_id).unwrap();
    let re = c.allocate(task, 9, ActionSpace::ApiGui, Some(&allocs[0].session_id)).unwrap();
    assert_ne!(re.worker_id, victim);
    let s = c.status().unwrap();
    assert_eq!(s.counters.reallocations, 1);
    assert_eq!(s.counters.allocations, s.counters.completions + s.active_sessions + s.counters.lost);
}

#[test]
fn worker_rejoins_a_restarted_controller_under_its_old_id() {
    let rig = Rig::new(1, 2);
    let id = rig.workers[0].worker_id.clone();
    let Rig { svc, workers, mut cfg } = rig;
    cfg.cluster.bind = svc.wire.local_addr().to_string();
    svc.shutdown();
    let svc = ControllerService::start(&cfg).unwrap();
    assert!(wait_until(Duration::from_secs(3), || {
        svc.wire.controller.snapshot_status().workers.iter().any(|w| w.worker_id == id)
    }));
    let c = RemoteCluster::new(&cfg.cluster.bind, Duration::from_secs(5));
    let task = &task_suite(SuiteProfile::Smoke)[0];
    let a = c.allocate(task, 1, ActionSpace::ApiGui, None).unwrap();
    assert_eq!(a.worker_id, id);
    drop(workers);
}

#[test]
fn drain_finishes_in_flight_work_but_takes_no_new_sessions() {
    let rig = Rig::new(2, 2);
    let c = rig.client();
    let task = &task_suite(SuiteProfile::Smoke)[0];
    let a = c.allocate(task, 1, ActionSpace::ApiGui, None).unwrap();
    rig.svc.wire.controller.drain_worker(&a.worker_id).unwrap();
    c.step(&a.session_id, 1, "SCROLL(1)").unwrap();
    for i in 0..2 {
        let b = c.allocate(task, 10 + i, ActionSpace::ApiGui, None).unwrap();
        assert_ne!(b.worker_id, a.worker_id);
    }
    c.release(&a.session_id).unwrap();
}

#[test]
fn controller_shutdown_marks_sessions_lost() {
    let rig = Rig::new(1, 4);
    let c = rig.client();
    let task = &task_suite(SuiteProfile::Smoke)[0];
    for i in 0..3 {
        c.allocate(task, i, ActionSpace::ApiGui, None).unwrap();
    }
    let Rig { svc, workers, .. } = rig;
    assert_eq!(svc.shutdown(), 3);
    drop(workers);
}

#[test]
fn second_controller_on_same_port_fails_to_bind() {
    let cfg = config();
    let first = ControllerService::start(&cfg).unwrap();
    let mut dup = config();
    dup.cluster.bind = first.wire.local_addr().to_string();
    assert!(matches!(ControllerService::start(&dup), Err(CliError::BindFailure { .. })));
    let mut dup = config();
    dup.cluster.http_bind = first.http.local_addr().to_string();
    let err = ControllerService::start(&dup).err().unwrap();
    assert!(matches!(err, CliError::BindFailure { .. }));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn worker_without_controller_gives_up() {
    let free = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let mut cfg = config();
    cfg.cluster.controller = Some(free.to_string());
    let t = Instant::now();
    let err = start_worker(&cfg, "127.0.0.1:0", None).err().unwrap();
    assert!(matches!(err, CliError::ControllerUnreachable(_)), "{err}");
    assert!(t.elapsed() < Duration::from_secs(5));
}

#[test]
fn unreachable_controller_surfaces_as_unavailable() {
    let free = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let c = RemoteCluster::new(&free.to_string(), Duration::from_millis(200));
    assert!(matches!(c.status(), Err(ClusterError::Unavailable(_))));
}
