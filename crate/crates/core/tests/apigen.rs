use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::Arc;
use std::time::Duration;

use deskgrid_core::apigen::stub::{shipped_names, shipped_specs};
use deskgrid_core::apigen::*;
use deskgrid_core::envsim::{Action, ActionSpace, ApiTable, Env};

fn requirements() -> Vec<String> {
    include_str!("../data/apigen/requirements.txt").lines().filter(|l| !l.trim().is_empty()).map(String::from).collect()
}

fn run_to_fixpoint(backend: &dyn GeneratorBackend) -> (ApiRegistry, Vec<PipelineReport>) {
    let mut reg = ApiRegistry::base();
    let mut reports = vec![];
    loop {
        let r = run_pipeline(&requirements(), &mut reg, backend, 3).unwrap();
        if r.gaps.is_empty() {
            break;
        }
        assert!(r.gaps.len() <= MAX_GAPS);
        reports.push(r);
    }
    (reg, reports)
}

#[test]
fn stub_pipeline_tests_every_shipped_api() {
    let (reg, reports) = run_to_fixpoint(&StubBackend::new());
    assert!(reports.len() >= 2, "the gap cap should split the work over several runs");
    for name in shipped_names() {
        assert_eq!(reg.status(name), Some(Status::Tested), "{name}");
    }
    assert!(reports.iter().all(|r| r.failed.is_empty()));
    reg.check().unwrap();
}

#[test]
fn stub_pipeline_is_byte_identical_across_runs() {
    let a = run_to_fixpoint(&StubBackend::new()).0.to_text();
    let b = run_to_fixpoint(&StubBackend::new()).0.to_text();
    assert_eq!(a, b);
    assert_eq!(ApiRegistry::from_text(&a).unwrap().to_text(), a);
}

#[test]
fn one_seeded_fault_costs_exactly_one_extra_iteration() {
    for spec in shipped_specs() {
        let name = spec.name.clone();
        let name = name.as_str();
        let b = StubBackend::new().with_fault(name, 1);
        let mut reg = ApiRegistry::new();
        reg.declare(spec).unwrap();
        implement_api(&mut reg, name, &b).unwrap();
        let out = repair_loop(&mut reg, name, &b, 5).unwrap();
        assert_eq!(out.iterations, 2, "{name}: {}", out.reports[0]);
    }
}

#[test]
fn tested_apis_are_callable_from_the_environment() {
    let (reg, _) = run_to_fixpoint(&StubBackend::new());
    let table = Arc::new(reg.api_table());
    let suite = deskgrid_core::envsim::task_suite(deskgrid_core::envsim::SuiteProfile::Smoke);
    let task = suite.iter().find(|t| t.task_id.starts_with("office")).unwrap();
    let mut env = Env::new(task, 0, ActionSpace::ApiGui, table).unwrap();
    let out = env.step(&Action::from_text("API sheet.sum_range(range=A1:A3,target=A4)")).unwrap();
    assert!(out.accepted, "{:?}", env.api_log());
    assert_eq!(env.api_log().len(), 1);
    assert!(reg.api_table().names().iter().all(|n| ApiTable::builtin().get(n).is_some() || shipped_names().contains(&n.as_str())));
}

/// Answers each POST with the next canned body; `None` closes the connection unanswered.
fn serve(replies: Vec<Option<String>>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for reply in replies {
            let (mut sock, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(sock.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            if let Some(r) = reply {
                let _ = write!(sock, "HTTP/1.1 200 OK\r\ncontent-type: text/plain\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{r}", r.len());
            }
        }
    });
    format!("http://{addr}/complete")
}

#[test]
fn remote_backend_retries_then_parses() {
    let stub = StubBackend::new();
    let spec = stub.propose_specs(&["sum".into()]).unwrap().remove(0);
    let specs = serde_json::to_string(&vec![spec.clone()]).unwrap();
    let url = serve(vec![None, Some(specs)]);
    let mut remote = RemoteBackend::new(&url, Duration::from_secs(5)).unwrap();
    remote.backoff = Duration::from_millis(10);
    let gaps = analyze_requirements(&["sum".into()], &ApiRegistry::base(), &remote, MAX_GAPS).unwrap();
    assert_eq!(gaps, vec![spec]);
}

#[test]
fn remote_backend_unreachable_and_garbage() {
    let dead = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let mut remote = RemoteBackend::new(&format!("http://{dead}/"), Duration::from_secs(2)).unwrap();
    remote.backoff = Duration::from_millis(5);
    assert!(matches!(remote.propose_specs(&[]), Err(ApigenError::BackendUnavailable(_))));

    let url = serve(vec![Some("sure, here you go".into())]);
    let remote = RemoteBackend::new(&url, Duration::from_secs(5)).unwrap();
    let spec = StubBackend::new().propose_specs(&["sum".into()]).unwrap().remove(0);
    assert!(matches!(remote.implement(&spec, None), Err(ApigenError::GenerationRejected { .. })));
}
