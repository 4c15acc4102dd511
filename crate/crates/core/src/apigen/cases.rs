//! Generated test cases and the fixture desktop they run against.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ApiSpec;
use crate::envsim::api::{run_artifact, ApiArtifact};
use crate::envsim::state::{App, EnvState, Node};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "probe", content = "at", rename_all = "snake_case")]
pub enum Probe {
    Cell(String),
    /// File text, `<dir>` for a directory, `<none>` if missing.
    File(String),
    Exists(String),
    Line(usize),
    Saved,
}

impl Probe {
    pub fn read(&self, s: &EnvState) -> String {
        match self {
            Probe::Cell(c) => c.parse().ok().and_then(|c| s.sheet.get(c)).unwrap_or("").to_string(),
            Probe::File(p) => match s.files.nodes.get(p) {
                Some(Node::File { text }) => text.clone(),
                Some(Node::Dir) => "<dir>".into(),
                None => "<none>".into(),
            },
            Probe::Exists(p) => s.files.exists(p).to_string(),
            Probe::Line(i) => s.editor.lines.get(*i).cloned().unwrap_or_else(|| "<none>".into()),
            Probe::Saved => s.editor.saved.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Expected {
    NoError,
    Value { probe: Probe, value: String },
    /// The call must fail and leave the state untouched.
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TestCase {
    pub api: String,
    pub args: BTreeMap<String, String>,
    pub expected: Expected,
}

impl TestCase {
    pub fn new(api: &str, args: &[(&str, &str)], expected: Expected) -> Self {
        TestCase { api: api.into(), args: args.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(), expected }
    }

    /// Arguments name only declared parameters and cover every required one.
    pub fn conforms_to(&self, spec: &ApiSpec) -> bool {
        self.api == spec.name
            && self.args.keys().all(|k| spec.params.iter().any(|p| &p.name == k))
            && spec.params.iter().filter(|p| p.required).all(|p| self.args.contains_key(&p.name))
    }
}

/// The desktop every generated test starts from.
pub fn fixture(app: App) -> EnvState {
    let mut s = EnvState::new(app, 64, vec![]);
    for (c, v) in [("A1", "1"), ("A2", "2"), ("A3", "3"), ("B1", "x")] {
        s.sheet.set(c.parse().expect("fixture cell"), v);
    }
    s.files.create_file("/a.txt", "hello").expect("fixture file");
    s.files.create_file("/b", "").expect("fixture file");
    s.files.mkdir("/d").expect("fixture dir");
    s.editor.lines = vec!["alpha".into(), "beta gamma".into()];
    s.editor.saved = true;
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestFailure {
    pub case: TestCase,
    pub message: String,
}

/// Outcome of one test run; the feedback handed to the generator on failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureReport {
    pub api: String,
    pub iteration: usize,
    pub passed: usize,
    pub failures: Vec<TestFailure>,
}

impl FailureReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

impl fmt::Display for FailureReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} iteration {}: {} passed, {} failed", self.api, self.iteration, self.passed, self.failures.len())?;
        for t in &self.failures {
            write!(f, "\n  {:?} {:?}: {}", t.case.args, t.case.expected, t.message)?;
        }
        Ok(())
    }
}

pub fn run_case(artifact: &ApiArtifact, case: &TestCase, app: App) -> Result<(), String> {
    let mut state = fixture(app);
    let before = state.clone();
    let result = run_artifact(artifact, &mut state, &case.args);
    match (&case.expected, result) {
        (Expected::NoError, Ok(())) => Ok(()),
        (Expected::Value { probe, value }, Ok(())) => {
            let got = probe.read(&state);
            if &got == value {
                Ok(())
            } else {
                Err(format!("{probe:?} read `{got}`, expected `{value}`"))
            }
        }
        (Expected::Rejected, Err(_)) if state == before => Ok(()),
        (Expected::Rejected, Err(_)) => Err("rejected call modified the state".into()),
        (Expected::Rejected, Ok(())) => Err("call succeeded, expected rejection".into()),
        (_, Err(e)) => Err(format!("runtime error: {e}")),
    }
}

pub fn run_tests(artifact: &ApiArtifact, cases: &[TestCase], app: App, iteration: usize) -> FailureReport {
    let mut report = FailureReport { api: artifact.name.clone(), iteration, passed: 0, failures: vec![] };
    for c in cases {
        match run_case(artifact, c, app) {
            Ok(()) => report.passed += 1,
            Err(message) => report.failures.push(TestFailure { case: c.clone(), message }),
        }
    }
    report
}
