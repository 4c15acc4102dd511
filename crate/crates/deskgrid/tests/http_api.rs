use std::sync::Arc;

use deskgrid::http::HttpServer;
use deskgrid_core::cluster::{EnvCluster, LocalCluster, StatusReport, Timing};
use deskgrid_core::envsim::{task_suite, ActionSpace, ApiTable, SuiteProfile};
use deskgrid_core::grpo::UpdateMetrics;
use reqwest::blocking::Client;
use serde_json::Value;

struct Rig {
    cluster: LocalCluster,
    _http: HttpServer,
    base: String,
    client: Client,
}

fn rig() -> Rig {
    let cluster = LocalCluster::start(2, 4, Timing::default(), Arc::new(ApiTable::builtin()));
    let http = HttpServer::start("127.0.0.1:0", cluster.controller().clone()).unwrap();
    let base = format!("http://{}", http.local_addr());
    Rig { cluster, _http: http, base, client: Client::new() }
}

impl Rig {
    fn status(&self) -> StatusReport {
        self.client.get(format!("{}/status", self.base)).send().unwrap().json().unwrap()
    }

    fn post(&self, path: &str) -> (u16, Value) {
        let r = self.client.post(format!("{}{path}", self.base)).send().unwrap();
        (r.status().as_u16(), r.json().unwrap())
    }
}

#[test]
fn fresh_status_is_an_empty_report() {
    let r = rig();
    let s = r.status();
    assert_eq!(s.proto_version, 1);
    assert_eq!(s.workers.len(), 2);
    assert_eq!(s.capacity, 8);
    assert_eq!(s.active_sessions, 0);
    assert!(s.metrics.is_empty());
    assert!(!s.training.paused);
}

#[test]
fn reset_reallocates_and_repeats_harmlessly() {
    let r = rig();
    let task = &task_suite(SuiteProfile::Smoke)[0];
    let a = r.cluster.allocate(task, 3, ActionSpace::ApiGui, None).unwrap();
    r.cluster.step(&a.session_id, 1, "SCROLL(1)").unwrap();
    let before = r.status().counters.reallocations;
    let (code, first) = r.post(&format!("/env/{}/reset", a.session_id));
    assert_eq!(code, 200);
    let fresh = first["session_id"].as_str().unwrap().to_string();
    assert_ne!(fresh, a.session_id);
    assert_eq!(first["observation"].as_str().unwrap(), a.observation);
    let after = r.status();
    assert_eq!(after.counters.reallocations, before + 1);
    assert_eq!(after.active_sessions, 1);

    let (code, second) = r.post(&format!("/env/{}/reset", a.session_id));
    assert_eq!(code, 200);
    assert_eq!(second, first);
    assert_eq!(r.status().counters.reallocations, before + 1);
    r.cluster.step(&fresh, 1, "SCROLL(1)").unwrap();
}

#[test]
fn reset_of_unknown_session_is_not_found() {
    let r = rig();
    let (code, body) = r.post("/env/s-nope/reset");
    assert_eq!(code, 404);
    assert_eq!(body["error"], "unknown_session");
}

#[test]
fn pause_and_resume_show_up_in_status_and_trainer_sync() {
    let r = rig();
    let (code, body) = r.post("/train/pause");
    assert_eq!((code, body["paused"].as_bool()), (200, Some(true)));
    assert!(r.status().training.paused);
    assert!(r.cluster.sync_training("rl1", &[]).unwrap());
    r.post("/train/pause");
    assert!(r.status().training.paused);
    let (code, body) = r.post("/train/resume");
    assert_eq!((code, body["paused"].as_bool()), (200, Some(false)));
    assert!(!r.status().training.paused);
    assert!(!r.cluster.sync_training("rl1", &[]).unwrap());
}

#[test]
fn drain_marks_worker_and_rejects_unknown_ids() {
    let r = rig();
    let id = r.cluster.worker_ids()[0].clone();
    let (code, _) = r.post(&format!("/worker/{id}/drain"));
    assert_eq!(code, 200);
    let (code, _) = r.post(&format!("/worker/{id}/drain"));
    assert_eq!(code, 200);
    assert!(r.status().workers.iter().any(|w| w.worker_id == id && w.draining));
    let (code, body) = r.post("/worker/w-999/drain");
    assert_eq!(code, 404);
    assert_eq!(body["error"], "unknown_worker");
}

#[test]
fn metrics_returns_the_published_series() {
    let r = rig();
    let m = |u: u64| UpdateMetrics {
        update: u,
        phase: "rl1".into(),
        mean_reward: 0.25 * u as f64,
        entropy: 1.0,
        kl: 0.0,
        clip_fraction: 0.0,
        loss: 0.0,
        reference_version: 0,
        batch_steps: 10,
        batch_trajectories: 2,
        max_version_gap: 0,
    };
    r.cluster.sync_training("rl1", &[m(1), m(2)]).unwrap();
    let series: Vec<UpdateMetrics> = r.client.get(format!("{}/metrics", r.base)).send().unwrap().json().unwrap();
    assert_eq!(series, vec![m(1), m(2)]);
    assert_eq!(r.status().training.updates, 2);
}
