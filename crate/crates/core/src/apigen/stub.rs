//! Deterministic template backend.

use std::collections::BTreeMap;

use super::cases::{fixture, Expected, Probe, TestCase};
use super::{ApiSpec, ApigenError, BackendKind, FailureReport, GeneratorBackend};
use crate::envsim::api::{run_artifact, Arg, ApiArtifact, Guard, OpCall, ParamSpec, Primitive, SemanticType};

struct Template {
    name: &'static str,
    keywords: &'static [&'static str],
    doc: &'static str,
    params: Vec<ParamSpec>,
    non_empty: &'static [&'static str],
    body: Vec<(Primitive, Vec<Arg>)>,
    /// Arguments valid on the fixture, and what to read back afterwards.
    typical: &'static [(&'static str, &'static str)],
    probes: Vec<Probe>,
}

fn p(name: &str) -> Arg {
    Arg::Param(name.into())
}

fn lit(v: &str) -> Arg {
    Arg::Lit(v.into())
}

fn templates() -> Vec<Template> {
    use Primitive::*;
    use SemanticType::*;
    let req = ParamSpec::required;
    let opt = ParamSpec::optional;
    vec![
        Template {
            name: "sheet.set_cell",
            keywords: &["set cell", "write cell", "enter value"],
            doc: "Write a value into one cell.",
            params: vec![req("cell", Cell), req("value", Text)],
            non_empty: &[],
            body: vec![(SheetSet, vec![p("cell"), p("value")])],
            typical: &[("cell", "A1"), ("value", "x")],
            probes: vec![Probe::Cell("A1".into())],
        },
        Template {
            name: "sheet.set_range",
            keywords: &["fill row", "fill column", "fill range", "enter values"],
            doc: "Write a |-separated run of values starting at a cell.",
            params: vec![req("start", Cell), req("values", Values), opt("dir", Direction)],
            non_empty: &[],
            body: vec![(SheetSetSeq, vec![p("start"), p("values"), p("dir")])],
            typical: &[("start", "C1"), ("values", "4|5"), ("dir", "col")],
            probes: vec![Probe::Cell("C1".into()), Probe::Cell("C2".into())],
        },
        Template {
            name: "sheet.sum_range",
            keywords: &["sum", "total"],
            doc: "Write the sum of a row or column range into a target cell.",
            params: vec![req("range", Range), req("target", Cell)],
            non_empty: &[],
            body: vec![(SheetSum, vec![p("range"), p("target")])],
            typical: &[("range", "A1:A3"), ("target", "A4")],
            probes: vec![Probe::Cell("A4".into())],
        },
        Template {
            name: "sheet.clear",
            keywords: &["clear cell", "erase cell", "blank"],
            doc: "Empty one cell.",
            params: vec![req("cell", Cell)],
            non_empty: &[],
            body: vec![(SheetClear, vec![p("cell")])],
            typical: &[("cell", "B1")],
            probes: vec![Probe::Cell("B1".into())],
        },
        Template {
            name: "files.create",
            keywords: &["create file", "new file", "write file"],
            doc: "Create a file with optional text.",
            params: vec![req("path", Path), opt("text", Text)],
            non_empty: &[],
            body: vec![(FsCreate, vec![p("path"), p("text")])],
            typical: &[("path", "/d/n.txt"), ("text", "hi")],
            probes: vec![Probe::File("/d/n.txt".into())],
        },
        Template {
            name: "files.mkdir",
            keywords: &["folder", "directory", "mkdir"],
            doc: "Create a directory.",
            params: vec![req("path", Path)],
            non_empty: &[],
            body: vec![(FsMkdir, vec![p("path")])],
            typical: &[("path", "/e")],
            probes: vec![Probe::File("/e".into())],
        },
        Template {
            name: "files.delete",
            keywords: &["delete", "remove"],
            doc: "Delete a file or an empty directory.",
            params: vec![req("path", Path)],
            non_empty: &[],
            body: vec![(FsRemove, vec![p("path")])],
            typical: &[("path", "/a.txt")],
            probes: vec![Probe::Exists("/a.txt".into())],
        },
        Template {
            name: "files.move",
            keywords: &["move", "rename"],
            doc: "Move or rename a file.",
            params: vec![req("src", Path), req("dst", Path)],
            non_empty: &[],
            body: vec![(FsMove, vec![p("src"), p("dst")])],
            typical: &[("src", "/a.txt"), ("dst", "/d/a.txt")],
            probes: vec![Probe::File("/d/a.txt".into()), Probe::Exists("/a.txt".into())],
        },
        Template {
            name: "files.touch",
            keywords: &["empty file", "touch"],
            doc: "Create an empty file.",
            params: vec![req("path", Path)],
            non_empty: &[],
            body: vec![(FsCreate, vec![p("path"), lit("")])],
            typical: &[("path", "/d/t")],
            probes: vec![Probe::File("/d/t".into())],
        },
        Template {
            name: "files.overwrite",
            keywords: &["overwrite"],
            doc: "Replace a file's contents.",
            params: vec![req("path", Path), req("text", Text)],
            non_empty: &[],
            body: vec![(FsRemove, vec![p("path")]), (FsCreate, vec![p("path"), p("text")])],
            typical: &[("path", "/a.txt"), ("text", "bye")],
            probes: vec![Probe::File("/a.txt".into())],
        },
        Template {
            name: "editor.append_line",
            keywords: &["append", "add a line", "add line"],
            doc: "Append a line to the document.",
            params: vec![req("text", Text)],
            non_empty: &[],
            body: vec![(EdAppend, vec![p("text")])],
            typical: &[("text", "omega")],
            probes: vec![Probe::Line(2)],
        },
        Template {
            name: "editor.replace",
            keywords: &["replace", "substitute"],
            doc: "Replace every occurrence of a string.",
            params: vec![req("old", Text), req("new", Text)],
            non_empty: &["old"],
            body: vec![(EdReplace, vec![p("old"), p("new")])],
            typical: &[("old", "beta"), ("new", "BETA")],
            probes: vec![Probe::Line(1)],
        },
        Template {
            name: "editor.set_line",
            keywords: &["line number", "set line", "rewrite line"],
            doc: "Overwrite the line at an index, or append at the end.",
            params: vec![req("index", Int), req("text", Text)],
            non_empty: &[],
            body: vec![(EdSetLine, vec![p("index"), p("text")])],
            typical: &[("index", "1"), ("text", "z")],
            probes: vec![Probe::Line(1)],
        },
        Template {
            name: "editor.save",
            keywords: &["save"],
            doc: "Save the document.",
            params: vec![],
            non_empty: &[],
            body: vec![(EdSave, vec![])],
            typical: &[],
            probes: vec![],
        },
        Template {
            name: "editor.append_and_save",
            keywords: &["append and save", "log a line"],
            doc: "Append a line and save.",
            params: vec![req("text", Text)],
            non_empty: &[],
            body: vec![(EdAppend, vec![p("text")]), (EdSave, vec![])],
            typical: &[("text", "done")],
            probes: vec![Probe::Line(2), Probe::Saved],
        },
    ]
}

/// Names of every API the stub backend can generate.
pub fn shipped_names() -> Vec<&'static str> {
    templates().iter().map(|t| t.name).collect()
}

pub fn shipped_specs() -> Vec<ApiSpec> {
    templates().iter().map(|t| ApiSpec { name: t.name.into(), params: t.params.clone(), doc: t.doc.into() }).collect()
}

fn build(t: &Template) -> ApiArtifact {
    let mut guards: Vec<Guard> = t.params.iter().map(|p| Guard::TypeCheck { param: p.name.clone() }).collect();
    guards.extend(t.non_empty.iter().map(|p| Guard::NonEmpty { param: p.to_string() }));
    ApiArtifact {
        name: t.name.into(),
        params: t.params.clone(),
        guards,
        body: t.body.iter().map(|(op, args)| OpCall { op: *op, args: args.clone() }).collect(),
        error_handling: true,
        logging: true,
    }
}

/// A plausible first draft with one bug: a parameter replaced by a literal, or a stray failing op.
fn flawed(mut a: ApiArtifact) -> ApiArtifact {
    for op in &mut a.body {
        if let Some(arg) = op.args.iter_mut().find(|x| matches!(x, Arg::Param(_))) {
            *arg = Arg::Lit(String::new());
            return a;
        }
    }
    a.body.push(OpCall { op: Primitive::FsRemove, args: vec![lit("/missing")] });
    a
}

/// Pure template backend; `faults` seeds how many drafts of an API come out broken.
#[derive(Debug, Clone, Default)]
pub struct StubBackend {
    pub faults: BTreeMap<String, usize>,
}

impl StubBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fault(mut self, api: &str, drafts: usize) -> Self {
        self.faults.insert(api.into(), drafts);
        self
    }

    fn template(&self, name: &str) -> Result<Template, ApigenError> {
        templates()
            .into_iter()
            .find(|t| t.name == name)
            .ok_or_else(|| ApigenError::GenerationRejected { api: name.into(), reason: "no template for this API".into() })
    }
}

impl GeneratorBackend for StubBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Stub
    }

    fn propose_specs(&self, examples: &[String]) -> Result<Vec<ApiSpec>, ApigenError> {
        let text = examples.join("\n").to_lowercase();
        Ok(templates()
            .iter()
            .filter(|t| t.keywords.iter().any(|k| text.contains(k)))
            .map(|t| ApiSpec { name: t.name.into(), params: t.params.clone(), doc: t.doc.into() })
            .collect())
    }

    fn implement(&self, spec: &ApiSpec, feedback: Option<&FailureReport>) -> Result<ApiArtifact, ApigenError> {
        let t = self.template(&spec.name)?;
        let attempt = feedback.map_or(0, |f| f.iteration);
        let good = build(&t);
        if attempt < self.faults.get(&spec.name).copied().unwrap_or(0) {
            Ok(flawed(good))
        } else {
            Ok(good)
        }
    }

    fn tests(&self, spec: &ApiSpec) -> Result<Vec<TestCase>, ApigenError> {
        let t = self.template(&spec.name)?;
        let reference = build(&t);
        let app = spec.app()?;
        let outcome = |args: &BTreeMap<String, String>| {
            let mut s = fixture(app);
            run_artifact(&reference, &mut s, args).map(|_| s)
        };
        let typical: BTreeMap<String, String> = t.typical.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        let mut cases = vec![TestCase { api: t.name.into(), args: typical.clone(), expected: Expected::NoError }];
        if let Ok(after) = outcome(&typical) {
            for probe in &t.probes {
                let value = probe.read(&after);
                cases.push(TestCase { api: t.name.into(), args: typical.clone(), expected: Expected::Value { probe: probe.clone(), value } });
            }
        }
        for param in &t.params {
            let mut args = typical.clone();
            args.insert(param.name.clone(), param.ty.boundary_value().into());
            let expected = if outcome(&args).is_ok() { Expected::NoError } else { Expected::Rejected };
            let case = TestCase { api: t.name.into(), args, expected };
            if !cases.contains(&case) {
                cases.push(case);
            }
        }
        Ok(cases)
    }
}
