//! Declarative API artifacts and the interpreter that runs them against an [`EnvState`].
//!
//! An artifact binds named, typed parameters to a short body of primitive
//! operations. Guards validate arguments before the body runs; the body runs
//! on a scratch copy of the state and is committed only if every op succeeds.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::action::ApiCall;
use super::state::{valid_path, CellRef, EnvState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SemanticType {
    Cell,
    Range,
    Text,
    Values,
    Direction,
    Path,
    Int,
}

impl SemanticType {
    pub fn check(self, value: &str) -> Result<(), String> {
        match self {
            SemanticType::Cell => value.parse::<CellRef>().map(drop),
            SemanticType::Range => parse_range(value).map(drop),
            SemanticType::Text => Ok(()),
            SemanticType::Values => {
                if value.is_empty() {
                    Err("values must be non-empty".into())
                } else {
                    Ok(())
                }
            }
            SemanticType::Direction => match value {
                "row" | "col" => Ok(()),
                other => Err(format!("direction must be row|col, got `{other}`")),
            },
            SemanticType::Path => {
                if valid_path(value) {
                    Ok(())
                } else {
                    Err(format!("invalid path `{value}`"))
                }
            }
            SemanticType::Int => value.parse::<usize>().map(drop).map_err(|_| format!("not a non-negative integer: `{value}`")),
        }
    }

    /// Boundary / empty value used by generated tests.
    pub fn boundary_value(self) -> &'static str {
        match self {
            SemanticType::Cell => "A1",
            SemanticType::Range => "A1:A1",
            SemanticType::Text => "",
            SemanticType::Values => "x",
            SemanticType::Direction => "row",
            SemanticType::Path => "/b",
            SemanticType::Int => "0",
        }
    }

    /// Ordinary value used by generated tests.
    pub fn typical_value(self) -> &'static str {
        match self {
            SemanticType::Cell => "B2",
            SemanticType::Range => "A1:A3",
            SemanticType::Text => "x",
            SemanticType::Values => "x|y",
            SemanticType::Direction => "col",
            SemanticType::Path => "/t",
            SemanticType::Int => "1",
        }
    }
}

/// Parses `A1:A3`; both ends must share a row or a column.
pub fn parse_range(s: &str) -> Result<Vec<CellRef>, String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("bad range `{s}`"))?;
    let a: CellRef = a.parse()?;
    let b: CellRef = b.parse()?;
    if a.col == b.col && a.row <= b.row {
        Ok((a.row..=b.row).map(|row| CellRef { col: a.col, row }).collect())
    } else if a.row == b.row && a.col <= b.col {
        Ok((a.col..=b.col).map(|col| CellRef { col, row: a.row }).collect())
    } else {
        Err(format!("range `{s}` must be a single row or column"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: SemanticType,
    pub required: bool,
}

impl ParamSpec {
    pub fn required(name: &str, ty: SemanticType) -> Self {
        Self { name: name.into(), ty, required: true }
    }

    pub fn optional(name: &str, ty: SemanticType) -> Self {
        Self { name: name.into(), ty, required: false }
    }
}

/// Primitive state operations an artifact body may invoke.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Primitive {
    SheetSet,
    SheetSetSeq,
    SheetSum,
    SheetClear,
    FsCreate,
    FsMkdir,
    FsRemove,
    FsMove,
    EdAppend,
    EdReplace,
    EdSetLine,
    EdSave,
}

impl Primitive {
    pub fn arity(self) -> usize {
        match self {
            Primitive::EdSave => 0,
            Primitive::SheetClear | Primitive::FsMkdir | Primitive::FsRemove | Primitive::EdAppend => 1,
            Primitive::SheetSet
            | Primitive::SheetSum
            | Primitive::FsCreate
            | Primitive::FsMove
            | Primitive::EdReplace
            | Primitive::EdSetLine => 2,
            Primitive::SheetSetSeq => 3,
        }
    }

    fn run(self, state: &mut EnvState, args: &[String]) -> Result<(), String> {
        match self {
            Primitive::SheetSet => {
                let cell: CellRef = args[0].parse()?;
                state.sheet.set(cell, &args[1]);
            }
            Primitive::SheetSetSeq => {
                let mut cell: Option<CellRef> = Some(args[0].parse()?);
                let by_row = args[2] != "col";
                for v in args[1].split('|') {
                    let c = cell.ok_or("values run off the sheet")?;
                    state.sheet.set(c, v);
                    cell = if by_row { c.right() } else { c.down() };
                }
            }
            Primitive::SheetSum => {
                let cells = parse_range(&args[0])?;
                let target: CellRef = args[1].parse()?;
                let mut total = 0.0f64;
                for c in cells {
                    if let Some(v) = state.sheet.get(c) {
                        total += v.trim().parse::<f64>().map_err(|_| format!("{c} is not numeric"))?;
                    }
                }
                let text = if total.fract() == 0.0 && total.abs() < 1e15 {
                    format!("{}", total as i64)
                } else {
                    format!("{total}")
                };
                state.sheet.set(target, &text);
            }
            Primitive::SheetClear => {
                let cell: CellRef = args[0].parse()?;
                state.sheet.set(cell, "");
            }
            Primitive::FsCreate => state.files.create_file(&args[0], &args[1])?,
            Primitive::FsMkdir => state.files.mkdir(&args[0])?,
            Primitive::FsRemove => state.files.remove(&args[0])?,
            Primitive::FsMove => state.files.rename(&args[0], &args[1])?,
            Primitive::EdAppend => state.editor.append_line(&args[0]),
            Primitive::EdReplace => {
                if args[0].is_empty() {
                    return Err("search text must be non-empty".into());
                }
                let mut hits = 0;
                for line in &mut state.editor.lines {
                    if line.contains(args[0].as_str()) {
                        hits += 1;
                        *line = line.replace(args[0].as_str(), &args[1]);
                    }
                }
                if hits == 0 {
                    return Err(format!("`{}` not found", args[0]));
                }
                state.editor.saved = false;
                state.editor.clamp_cursor();
            }
            Primitive::EdSetLine => {
                let index: usize = args[0].parse().map_err(|_| "bad line index")?;
                let lines = &mut state.editor.lines;
                match index.cmp(&lines.len()) {
                    std::cmp::Ordering::Less => lines[index] = args[1].clone(),
                    std::cmp::Ordering::Equal => lines.push(args[1].clone()),
                    std::cmp::Ordering::Greater => return Err(format!("line {index} out of range")),
                }
                state.editor.saved = false;
            }
            Primitive::EdSave => state.editor.saved = true,
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "from", content = "value", rename_all = "lowercase")]
pub enum Arg {
    Param(String),
    Lit(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OpCall {
    pub op: Primitive,
    pub args: Vec<Arg>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "guard", rename_all = "snake_case")]
pub enum Guard {
    /// Argument must conform to the parameter's semantic type.
    TypeCheck { param: String },
    NonEmpty { param: String },
}

/// The generated "code" for one API.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ApiArtifact {
    pub name: String,
    pub params: Vec<ParamSpec>,
    pub guards: Vec<Guard>,
    pub body: Vec<OpCall>,
    /// Body errors are caught and reported instead of aborting the caller.
    pub error_handling: bool,
    /// Every invocation is recorded in the API log.
    pub logging: bool,
}

impl ApiArtifact {
    /// Static validation applied before an artifact may be registered.
    pub fn validate(&self) -> Result<(), String> {
        let declared: Vec<&str> = self.params.iter().map(|p| p.name.as_str()).collect();
        if !self.error_handling {
            return Err("artifact has no error handling".into());
        }
        if !self.logging {
            return Err("artifact has no logging hook".into());
        }
        if self.body.is_empty() {
            return Err("artifact body is empty".into());
        }
        for p in &self.params {
            let guarded = self
                .guards
                .iter()
                .any(|g| matches!(g, Guard::TypeCheck { param } if param == &p.name));
            if !guarded {
                return Err(format!("parameter `{}` is not type-checked", p.name));
            }
        }
        for g in &self.guards {
            let (Guard::TypeCheck { param } | Guard::NonEmpty { param }) = g;
            if !declared.contains(&param.as_str()) {
                return Err(format!("guard references unknown parameter `{param}`"));
            }
        }
        for op in &self.body {
            if op.args.len() != op.op.arity() {
                return Err(format!("{:?} takes {} args, got {}", op.op, op.op.arity(), op.args.len()));
            }
            for a in &op.args {
                if let Arg::Param(p) = a {
                    if !declared.contains(&p.as_str()) {
                        return Err(format!("body references unknown parameter `{p}`"));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ApiError {
    #[error("unknown API `{0}`")]
    Unknown(String),
    #[error("{api}: {message}")]
    BadArgs { api: String, message: String },
    #[error("{api}: {message}")]
    Failed { api: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiLogEntry {
    pub name: String,
    pub args: BTreeMap<String, String>,
    pub ok: bool,
    pub message: String,
}

impl fmt::Display for ApiLogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:?} ok={} {}", self.name, self.args, self.ok, self.message)
    }
}

/// Name-indexed set of artifacts envsim can execute.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ApiTable {
    artifacts: BTreeMap<String, ApiArtifact>,
}

impl ApiTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn builtin() -> Self {
        let mut table = Self::new();
        for a in builtin_artifacts() {
            table.register(a).expect("builtin artifacts validate");
        }
        table
    }

    pub fn register(&mut self, artifact: ApiArtifact) -> Result<(), String> {
        artifact.validate()?;
        self.artifacts.insert(artifact.name.clone(), artifact);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ApiArtifact> {
        self.artifacts.get(name)
    }

    pub fn names(&self) -> Vec<String> {
        self.artifacts.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.artifacts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.artifacts.is_empty()
    }

    pub fn invoke(&self, state: &mut EnvState, call: &ApiCall, log: &mut Vec<ApiLogEntry>) -> Result<(), ApiError> {
        let artifact = self.get(&call.name).ok_or_else(|| ApiError::Unknown(call.name.clone()))?;
        let result = run_artifact(artifact, state, &call.args);
        if artifact.logging {
            log.push(ApiLogEntry {
                name: call.name.clone(),
                args: call.args.clone(),
                ok: result.is_ok(),
                message: result.as_ref().err().map(ToString::to_string).unwrap_or_default(),
            });
        }
        result
    }
}

/// Runs one artifact transactionally.
pub fn run_artifact(artifact: &ApiArtifact, state: &mut EnvState, args: &BTreeMap<String, String>) -> Result<(), ApiError> {
    let bad = |message: String| ApiError::BadArgs { api: artifact.name.clone(), message };
    for k in args.keys() {
        if !artifact.params.iter().any(|p| &p.name == k) {
            return Err(bad(format!("unexpected argument `{k}`")));
        }
    }
    let mut bound: BTreeMap<&str, String> = BTreeMap::new();
    for p in &artifact.params {
        match args.get(&p.name) {
            Some(v) => {
                bound.insert(&p.name, v.clone());
            }
            None if p.required => return Err(bad(format!("missing argument `{}`", p.name))),
            None => {
                bound.insert(&p.name, String::new());
            }
        }
    }
    for g in &artifact.guards {
        match g {
            Guard::TypeCheck { param } => {
                let spec = artifact.params.iter().find(|p| &p.name == param);
                let value = &bound[param.as_str()];
                if let Some(spec) = spec {
                    if !(value.is_empty() && !spec.required) {
                        spec.ty.check(value).map_err(|m| bad(format!("{param}: {m}")))?;
                    }
                }
            }
            Guard::NonEmpty { param } => {
                if bound[param.as_str()].is_empty() {
                    return Err(bad(format!("`{param}` must be non-empty")));
                }
            }
        }
    }
    let mut scratch = state.clone();
    for op in &artifact.body {
        let values: Vec<String> = op
            .args
            .iter()
            .map(|a| match a {
                Arg::Param(p) => bound[p.as_str()].clone(),
                Arg::Lit(l) => l.clone(),
            })
            .collect();
        op.op
            .run(&mut scratch, &values)
            .map_err(|message| ApiError::Failed { api: artifact.name.clone(), message })?;
    }
    *state = scratch;
    Ok(())
}

fn artifact(name: &str, params: Vec<ParamSpec>, non_empty: &[&str], body: Vec<(Primitive, Vec<Arg>)>) -> ApiArtifact {
    let mut guards: Vec<Guard> = params.iter().map(|p| Guard::TypeCheck { param: p.name.clone() }).collect();
    guards.extend(non_empty.iter().map(|p| Guard::NonEmpty { param: p.to_string() }));
    ApiArtifact {
        name: name.into(),
        params,
        guards,
        body: body.into_iter().map(|(op, args)| OpCall { op, args }).collect(),
        error_handling: true,
        logging: true,
    }
}

fn p(name: &str) -> Arg {
    Arg::Param(name.into())
}

/// Reference implementations of every shipped API.
pub fn builtin_artifacts() -> Vec<ApiArtifact> {
    use Primitive::*;
    use SemanticType::*;
    let req = ParamSpec::required;
    vec![
        artifact("sheet.set_cell", vec![req("cell", Cell), req("value", Text)], &[], vec![(SheetSet, vec![p("cell"), p("value")])]),
        artifact(
            "sheet.set_range",
            vec![req("start", Cell), req("values", Values), ParamSpec::optional("dir", Direction)],
            &[],
            vec![(SheetSetSeq, vec![p("start"), p("values"), p("dir")])],
        ),
        artifact("sheet.sum_range", vec![req("range", Range), req("target", Cell)], &[], vec![(SheetSum, vec![p("range"), p("target")])]),
        artifact("sheet.clear", vec![req("cell", Cell)], &[], vec![(SheetClear, vec![p("cell")])]),
        artifact(
            "files.create",
            vec![req("path", Path), ParamSpec::optional("text", Text)],
            &[],
            vec![(FsCreate, vec![p("path"), p("text")])],
        ),
        artifact("files.mkdir", vec![req("path", Path)], &[], vec![(FsMkdir, vec![p("path")])]),
        artifact("files.delete", vec![req("path", Path)], &[], vec![(FsRemove, vec![p("path")])]),
        artifact("files.move", vec![req("src", Path), req("dst", Path)], &[], vec![(FsMove, vec![p("src"), p("dst")])]),
        artifact("editor.append_line", vec![req("text", Text)], &[], vec![(EdAppend, vec![p("text")])]),
        artifact("editor.replace", vec![req("old", Text), req("new", Text)], &["old"], vec![(EdReplace, vec![p("old"), p("new")])]),
        artifact("editor.set_line", vec![req("index", Int), req("text", Text)], &[], vec![(EdSetLine, vec![p("index"), p("text")])]),
        artifact("editor.save", vec![], &[], vec![(EdSave, vec![])]),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsim::state::App;

    fn state() -> EnvState {
        EnvState::new(App::Sheet, 10, vec![])
    }

    fn call(name: &str, args: &[(&str, &str)]) -> ApiCall {
        ApiCall::new(name, args.iter().map(|(k, v)| (*k, v.to_string())))
    }

    #[test]
    fn builtins_validate_and_run() {
        let table = ApiTable::builtin();
        let mut s = state();
        let mut log = vec![];
        table.invoke(&mut s, &call("sheet.set_range", &[("start", "A1"), ("values", "1|2|3"), ("dir", "col")]), &mut log).unwrap();
        table.invoke(&mut s, &call("sheet.sum_range", &[("range", "A1:A3"), ("target", "A4")]), &mut log).unwrap();
        assert_eq!(s.sheet.get("A4".parse().unwrap()), Some("6"));
        assert_eq!(log.len(), 2);
        assert!(log.iter().all(|e| e.ok));
    }

    #[test]
    fn failures_leave_state_untouched() {
        let table = ApiTable::builtin();
        let mut s = state();
        let before = s.clone();
        let mut log = vec![];
        let err = table.invoke(&mut s, &call("files.create", &[("path", "/missing/a.txt")]), &mut log).unwrap_err();
        assert!(matches!(err, ApiError::Failed { .. }));
        assert_eq!(s, before);
        let err = table.invoke(&mut s, &call("sheet.set_cell", &[("cell", "Z9"), ("value", "x")]), &mut log).unwrap_err();
        assert!(matches!(err, ApiError::BadArgs { .. }));
        let err = table.invoke(&mut s, &call("sheet.set_cell", &[("cell", "A1")]), &mut log).unwrap_err();
        assert!(matches!(err, ApiError::BadArgs { .. }));
        assert!(matches!(table.invoke(&mut s, &call("sheet.nope", &[]), &mut log), Err(ApiError::Unknown(_))));
        assert_eq!(log.iter().filter(|e| !e.ok).count(), 3);
    }

    #[test]
    fn validation_rules() {
        let mut a = builtin_artifacts().remove(0);
        a.error_handling = false;
        assert!(a.validate().is_err());
        let mut a = builtin_artifacts().remove(0);
        a.guards.clear();
        assert!(a.validate().is_err());
        let mut a = builtin_artifacts().remove(0);
        a.body[0].args.pop();
        assert!(a.validate().is_err());
    }
}
