//! Automated API construction: find missing APIs in task examples, implement
//! them as declarative artifacts, generate unit tests, and repair until they pass.

pub mod cases;
pub mod remote;
pub mod stub;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use cases::{fixture, run_tests, Expected, FailureReport, Probe, TestCase};
pub use remote::RemoteBackend;
pub use stub::StubBackend;

use crate::envsim::api::{ApiArtifact, ApiTable, ParamSpec};
use crate::envsim::state::App;

/// Most gap specs one analysis run may return.
pub const MAX_GAPS: usize = 8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ApigenError {
    #[error("generator backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("generation rejected for {api}: {reason}")]
    GenerationRejected { api: String, reason: String },
    #[error("{api} still failing after {} repair iterations", reports.len())]
    ExhaustedRepairs { api: String, reports: Vec<FailureReport> },
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("unknown API `{0}`")]
    UnknownApi(String),
    #[error("{api} is {status:?}, needs {needed:?}")]
    WrongStatus { api: String, status: Status, needed: Status },
    #[error("registry file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ApiSpec {
    pub name: String,
    pub params: Vec<ParamSpec>,
    pub doc: String,
}

impl ApiSpec {
    pub fn validate(&self) -> Result<(), ApigenError> {
        let bad = |m: String| Err(ApigenError::InvalidSpec(m));
        let Some((app, verb)) = self.name.split_once('.') else {
            return bad(format!("`{}` is not app.verb", self.name));
        };
        if app.parse::<App>().is_err() {
            return bad(format!("unknown app in `{}`", self.name));
        }
        if verb.is_empty() || !verb.chars().all(|c| c.is_ascii_lowercase() || c == '_') {
            return bad(format!("bad verb in `{}`", self.name));
        }
        for (i, p) in self.params.iter().enumerate() {
            if self.params[..i].iter().any(|q| q.name == p.name) {
                return bad(format!("duplicate parameter `{}` in {}", p.name, self.name));
            }
        }
        Ok(())
    }

    pub fn app(&self) -> Result<App, ApigenError> {
        let app = self.name.split_once('.').map_or("", |(a, _)| a);
        app.parse().map_err(ApigenError::InvalidSpec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Declared,
    Implemented,
    Tested,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub spec: ApiSpec,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact: Option<ApiArtifact>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tests: Vec<TestCase>,
    /// Repair iterations the last repair loop needed.
    #[serde(default)]
    pub iterations: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ApiRegistry {
    pub entries: BTreeMap<String, RegistryEntry>,
}

impl ApiRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The hand-written starting point: one tested API per app.
    pub fn base() -> Self {
        let mut r = Self::new();
        let table = ApiTable::builtin();
        for name in ["sheet.set_cell", "files.create", "editor.append_line"] {
            let a = table.get(name).expect("builtin").clone();
            let spec = ApiSpec { name: name.into(), params: a.params.clone(), doc: String::new() };
            r.entries.insert(name.into(), RegistryEntry { spec, status: Status::Tested, artifact: Some(a), tests: vec![], iterations: 0 });
        }
        r
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn status(&self, name: &str) -> Option<Status> {
        self.entries.get(name).map(|e| e.status)
    }

    pub fn declare(&mut self, spec: ApiSpec) -> Result<(), ApigenError> {
        spec.validate()?;
        if self.contains(&spec.name) {
            return Err(ApigenError::InvalidSpec(format!("{} already declared", spec.name)));
        }
        self.entries
            .insert(spec.name.clone(), RegistryEntry { spec, status: Status::Declared, artifact: None, tests: vec![], iterations: 0 });
        Ok(())
    }

    fn entry(&mut self, name: &str) -> Result<&mut RegistryEntry, ApigenError> {
        self.entries.get_mut(name).ok_or_else(|| ApigenError::UnknownApi(name.into()))
    }

    /// Raises the status; never lowers it.
    fn promote(&mut self, name: &str, to: Status) -> Result<(), ApigenError> {
        let e = self.entry(name)?;
        e.status = e.status.max(to);
        Ok(())
    }

    /// `tested ⇒ implemented ⇒ declared`, and names are unique by construction.
    pub fn check(&self) -> Result<(), String> {
        for (name, e) in &self.entries {
            if name != &e.spec.name {
                return Err(format!("entry `{name}` holds spec `{}`", e.spec.name));
            }
            if e.status >= Status::Implemented && e.artifact.is_none() {
                return Err(format!("{name} is {:?} without an artifact", e.status));
            }
        }
        Ok(())
    }

    /// Executable table of every tested API.
    pub fn api_table(&self) -> ApiTable {
        let mut t = ApiTable::new();
        for e in self.entries.values().filter(|e| e.status == Status::Tested) {
            t.register(e.artifact.clone().expect("tested entries carry artifacts")).expect("tested artifacts validate");
        }
        t
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("registry serializes") + "\n"
    }

    pub fn from_text(text: &str) -> Result<Self, ApigenError> {
        let r: Self = serde_json::from_str(text).map_err(|e| ApigenError::Io(e.to_string()))?;
        r.check().map_err(ApigenError::Io)?;
        Ok(r)
    }

    pub fn save(&self, path: &Path) -> Result<(), ApigenError> {
        std::fs::write(path, self.to_text()).map_err(|e| ApigenError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, ApigenError> {
        let text = std::fs::read_to_string(path).map_err(|e| ApigenError::Io(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Stub,
    Remote,
}

/// Stand-in for the language model that writes specs, code and tests.
pub trait GeneratorBackend {
    fn kind(&self) -> BackendKind;
    fn propose_specs(&self, examples: &[String]) -> Result<Vec<ApiSpec>, ApigenError>;
    /// `feedback` is the failing report of the previous draft, if any.
    fn implement(&self, spec: &ApiSpec, feedback: Option<&FailureReport>) -> Result<ApiArtifact, ApigenError>;
    fn tests(&self, spec: &ApiSpec) -> Result<Vec<TestCase>, ApigenError>;
}

/// Specs the examples need that the registry lacks, at most `cap`.
pub fn analyze_requirements(
    examples: &[String],
    registry: &ApiRegistry,
    backend: &dyn GeneratorBackend,
    cap: usize,
) -> Result<Vec<ApiSpec>, ApigenError> {
    let mut out: Vec<ApiSpec> = vec![];
    for s in backend.propose_specs(examples)? {
        if out.len() == cap {
            break;
        }
        if registry.contains(&s.name) || out.iter().any(|o| o.name == s.name) || s.validate().is_err() {
            continue;
        }
        out.push(s);
    }
    Ok(out)
}

fn checked(spec: &ApiSpec, a: ApiArtifact) -> Result<ApiArtifact, ApigenError> {
    let reject = |reason: String| ApigenError::GenerationRejected { api: spec.name.clone(), reason };
    a.validate().map_err(reject)?;
    if a.name != spec.name || a.params != spec.params {
        return Err(reject("artifact does not match its spec".into()));
    }
    Ok(a)
}

/// Generates and statically validates an artifact, then records it as implemented.
pub fn implement_api(registry: &mut ApiRegistry, name: &str, backend: &dyn GeneratorBackend) -> Result<ApiArtifact, ApigenError> {
    let spec = registry.entry(name)?.spec.clone();
    let a = checked(&spec, backend.implement(&spec, None)?)?;
    registry.entry(name)?.artifact = Some(a.clone());
    registry.promote(name, Status::Implemented)?;
    Ok(a)
}

/// Generated cases, checked against the spec's parameter list.
pub fn generate_tests(spec: &ApiSpec, backend: &dyn GeneratorBackend) -> Result<Vec<TestCase>, ApigenError> {
    let cases = backend.tests(spec)?;
    let reject = |reason: &str| ApigenError::GenerationRejected { api: spec.name.clone(), reason: reason.into() };
    if let Some(c) = cases.iter().find(|c| !c.conforms_to(spec)) {
        return Err(reject(&format!("test case args {:?} do not fit the spec", c.args)));
    }
    if !cases.iter().any(|c| c.expected == Expected::NoError) {
        return Err(reject("no no_error case"));
    }
    if !spec.params.is_empty() && !cases.iter().any(|c| matches!(c.expected, Expected::Value { .. })) {
        return Err(reject("no value case"));
    }
    Ok(cases)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepairOutcome {
    pub artifact: ApiArtifact,
    pub iterations: usize,
    pub reports: Vec<FailureReport>,
}

/// Tests the current artifact, feeding failures back to the backend, for at most `max_iters` rounds.
pub fn repair_loop(
    registry: &mut ApiRegistry,
    name: &str,
    backend: &dyn GeneratorBackend,
    max_iters: usize,
) -> Result<RepairOutcome, ApigenError> {
    let entry = registry.entry(name)?;
    let spec = entry.spec.clone();
    if entry.status < Status::Implemented {
        return Err(ApigenError::WrongStatus { api: name.into(), status: entry.status, needed: Status::Implemented });
    }
    if max_iters == 0 {
        return Err(ApigenError::InvalidSpec("max_iters must be at least 1".into()));
    }
    let mut artifact = entry.artifact.clone().expect("implemented entries carry artifacts");
    let tests = generate_tests(&spec, backend)?;
    let app = spec.app()?;
    let mut reports: Vec<FailureReport> = vec![];
    for iteration in 1..=max_iters {
        if let Some(last) = reports.last() {
            artifact = checked(&spec, backend.implement(&spec, Some(last))?)?;
            registry.entry(name)?.artifact = Some(artifact.clone());
        }
        let report = run_tests(&artifact, &tests, app, iteration);
        tracing::debug!("{report}");
        let ok = report.ok();
        reports.push(report);
        if ok {
            let e = registry.entry(name)?;
            e.tests = tests;
            e.iterations = iteration;
            registry.promote(name, Status::Tested)?;
            return Ok(RepairOutcome { artifact, iterations: iteration, reports });
        }
    }
    Err(ApigenError::ExhaustedRepairs { api: name.into(), reports })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub gaps: Vec<String>,
    /// API name → repair iterations used.
    pub tested: BTreeMap<String, usize>,
    /// API name → error text.
    pub failed: BTreeMap<String, String>,
}

/// analyze → declare → implement → test/repair, for every gap found.
pub fn run_pipeline(
    examples: &[String],
    registry: &mut ApiRegistry,
    backend: &dyn GeneratorBackend,
    max_iters: usize,
) -> Result<PipelineReport, ApigenError> {
    let gaps = analyze_requirements(examples, registry, backend, MAX_GAPS)?;
    let mut report = PipelineReport { gaps: gaps.iter().map(|s| s.name.clone()).collect(), tested: BTreeMap::new(), failed: BTreeMap::new() };
    for spec in gaps {
        let name = spec.name.clone();
        registry.declare(spec)?;
        let result = implement_api(registry, &name, backend).and_then(|_| repair_loop(registry, &name, backend, max_iters));
        match result {
            Ok(o) => {
                report.tested.insert(name, o.iterations);
            }
            Err(ApigenError::BackendUnavailable(m)) => return Err(ApigenError::BackendUnavailable(m)),
            Err(e) => {
                report.failed.insert(name, e.to_string());
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsim::api::SemanticType;

    fn ex(lines: &[&str]) -> Vec<String> {
        lines.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn sum_gap_found_and_covered_examples_yield_nothing() {
        let r = ApiRegistry::base();
        let b = StubBackend::new();
        let gaps = analyze_requirements(&ex(&["Put the sum of column A in A4"]), &r, &b, MAX_GAPS).unwrap();
        assert_eq!(gaps.iter().map(|s| s.name.as_str()).collect::<Vec<_>>(), ["sheet.sum_range"]);
        assert!(analyze_requirements(&ex(&["Set cell B2 to 5"]), &r, &b, MAX_GAPS).unwrap().is_empty());
    }

    struct Flood;
    impl GeneratorBackend for Flood {
        fn kind(&self) -> BackendKind {
            BackendKind::Stub
        }
        fn propose_specs(&self, _: &[String]) -> Result<Vec<ApiSpec>, ApigenError> {
            Ok((0..30)
                .map(|i| ApiSpec { name: format!("sheet.op_{}", char::from(b'a' + i as u8 % 26)) + &"x".repeat(i / 26), params: vec![], doc: String::new() })
                .collect())
        }
        fn implement(&self, s: &ApiSpec, _: Option<&FailureReport>) -> Result<ApiArtifact, ApigenError> {
            Err(ApigenError::GenerationRejected { api: s.name.clone(), reason: "n/a".into() })
        }
        fn tests(&self, _: &ApiSpec) -> Result<Vec<TestCase>, ApigenError> {
            Ok(vec![])
        }
    }

    #[test]
    fn gap_cap_is_enforced() {
        let gaps = analyze_requirements(&[], &ApiRegistry::new(), &Flood, MAX_GAPS).unwrap();
        assert_eq!(gaps.len(), 8);
    }

    #[test]
    fn implement_is_pure_and_rejects_missing_error_handling() {
        let mut r = ApiRegistry::base();
        let b = StubBackend::new();
        let spec = b.propose_specs(&ex(&["sum"])).unwrap().remove(0);
        r.declare(spec.clone()).unwrap();
        let a1 = implement_api(&mut r, "sheet.sum_range", &b).unwrap();
        assert_eq!(r.status("sheet.sum_range"), Some(Status::Implemented));
        assert_eq!(b.implement(&spec, None).unwrap(), a1);
        let mut no_eh = a1.clone();
        no_eh.error_handling = false;
        assert!(matches!(checked(&spec, no_eh), Err(ApigenError::GenerationRejected { .. })));
    }

    #[test]
    fn test_generation_rules() {
        let b = StubBackend::new();
        let spec = |n: &str| b.propose_specs(&ex(&["set cell", "set line", "save"])).unwrap().into_iter().find(|s| s.name == n).unwrap();
        let set = generate_tests(&spec("sheet.set_cell"), &b).unwrap();
        let typical = TestCase::new("sheet.set_cell", &[("cell", "A1"), ("value", "x")], Expected::NoError);
        assert!(set.contains(&typical));
        assert!(set.iter().any(|c| c.expected == Expected::Value { probe: Probe::Cell("A1".into()), value: "x".into() }));
        let line = generate_tests(&spec("editor.set_line"), &b).unwrap();
        assert!(line.iter().any(|c| c.args.get("index").map(String::as_str) == Some("0")));
        assert_eq!(generate_tests(&spec("editor.save"), &b).unwrap(), vec![TestCase::new("editor.save", &[], Expected::NoError)]);
    }

    #[test]
    fn repair_loop_iterations() {
        let b = StubBackend::new().with_fault("files.delete", 1).with_fault("files.move", usize::MAX);
        let mut r = ApiRegistry::base();
        for s in b.propose_specs(&ex(&["sum", "delete", "move"])).unwrap() {
            r.declare(s).unwrap();
        }
        for n in ["sheet.sum_range", "files.delete", "files.move"] {
            implement_api(&mut r, n, &b).unwrap();
        }
        assert_eq!(repair_loop(&mut r, "sheet.sum_range", &b, 3).unwrap().iterations, 1);
        let o = repair_loop(&mut r, "files.delete", &b, 3).unwrap();
        assert_eq!(o.iterations, 2);
        assert!(!o.reports[0].ok());
        assert_eq!(r.status("files.delete"), Some(Status::Tested));
        match repair_loop(&mut r, "files.move", &b, 3) {
            Err(ApigenError::ExhaustedRepairs { reports, .. }) => assert_eq!(reports.len(), 3),
            other => panic!("{other:?}"),
        }
        assert_eq!(r.status("files.move"), Some(Status::Implemented));
        r.check().unwrap();
    }

    #[test]
    fn spec_validation() {
        let ok = ApiSpec { name: "sheet.x".into(), params: vec![], doc: String::new() };
        ok.validate().unwrap();
        let dup = ApiSpec {
            params: vec![ParamSpec::required("a", SemanticType::Int), ParamSpec::required("a", SemanticType::Text)],
            ..ok.clone()
        };
        assert!(dup.validate().is_err());
        assert!(ApiSpec { name: "browser.open".into(), ..ok }.validate().is_err());
    }
}
