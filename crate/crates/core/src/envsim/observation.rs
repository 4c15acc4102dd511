//! Canonical text observation of an [`EnvState`] and the agent context built on it.
//!
//! The observation is line-oriented with a fixed section order, so the same
//! state always renders to the same bytes and the text parses back to the
//! state it came from.

use std::fmt::Write as _;

use super::state::{App, EnvState, Focus, Node, Prompt};
use super::task::Subgoal;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("observation line {line}: {reason}")]
pub struct ObservationError {
    pub line: usize,
    pub reason: String,
}

/// Escapes backslashes and newlines so a value fits on one line.
pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape(s: &str) -> Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('\\') => out.push('\\'),
                Some('n') => out.push('\n'),
                _ => return Err(format!("bad escape in `{s}`")),
            }
        } else {
            out.push(c);
        }
    }
    Ok(out)
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

/// Renders the state. Sections: desktop, sheet, files, editor, apis.
pub fn serialize_observation(s: &EnvState) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "desktop active={} focus={} step={}/{} done={}",
        s.active,
        s.focus.widget_id(),
        s.step_count,
        s.max_steps,
        yes_no(s.done)
    );
    if s.sheet.cells.is_empty() {
        out.push_str("sheet grid 8x8 empty\n");
    } else {
        for (cell, value) in &s.sheet.cells {
            let _ = writeln!(out, "sheet cell {cell}={}", escape(value));
        }
    }
    let f = &s.files;
    let _ = writeln!(
        out,
        "files cwd={} selected={} clipboard={} prompt={}",
        f.cwd,
        f.selected.as_deref().unwrap_or("none"),
        f.clipboard.as_deref().unwrap_or("none"),
        f.prompt.map_or("none", Prompt::as_str)
    );
    for (i, (name, is_dir)) in f.list(&f.cwd).iter().enumerate() {
        let _ = writeln!(out, "files entry {i} {} {name}", if *is_dir { "dir" } else { "file" });
    }
    for (path, node) in &f.nodes {
        match node {
            Node::Dir => {
                let _ = writeln!(out, "files node dir {path}");
            }
            Node::File { text } => {
                let _ = writeln!(out, "files node file {path}={}", escape(text));
            }
        }
    }
    let e = &s.editor;
    let _ = writeln!(
        out,
        "editor cursor={}:{} select={} saved={}",
        e.cursor.0,
        e.cursor.1,
        yes_no(e.select_to_end),
        yes_no(e.saved)
    );
    for (i, line) in e.lines.iter().enumerate() {
        let _ = writeln!(out, "editor line {i}={}", escape(line));
    }
    if s.apis.is_empty() {
        out.push_str("apis none\n");
    } else {
        let _ = writeln!(out, "apis {}", s.apis.join(" "));
    }
    out
}

fn kv<'a>(field: &'a str, key: &str) -> Result<&'a str, String> {
    field
        .strip_prefix(key)
        .and_then(|r| r.strip_prefix('='))
        .ok_or_else(|| format!("expected `{key}=`"))
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "yes" => Ok(true),
        "no" => Ok(false),
        other => Err(format!("expected yes|no, got `{other}`")),
    }
}

fn opt(v: &str) -> Option<String> {
    (v != "none").then(|| v.to_string())
}

/// Inverse of [`serialize_observation`].
pub fn parse_observation(text: &str) -> Result<EnvState, ObservationError> {
    let mut state: Option<EnvState> = None;
    let mut lines_seen = false;
    for (idx, line) in text.lines().enumerate() {
        let err = |reason: String| ObservationError { line: idx + 1, reason };
        let (section, rest) = line.split_once(' ').ok_or_else(|| err("missing section".into()))?;
        if section == "desktop" {
            let f: Vec<&str> = rest.split(' ').collect();
            if f.len() != 4 {
                return Err(err("desktop line needs 4 fields".into()));
            }
            let active: App = kv(f[0], "active").and_then(str::parse).map_err(err)?;
            let focus = kv(f[1], "focus").and_then(Focus::from_widget_id).map_err(err)?;
            let (step, max) = kv(f[2], "step").map_err(err)?.split_once('/').ok_or_else(|| err("bad step".into()))?;
            let mut s = EnvState::new(active, max.parse().map_err(|_| err("bad max".into()))?, vec![]);
            s.focus = focus;
            s.step_count = step.parse().map_err(|_| err("bad step".into()))?;
            s.done = kv(f[3], "done").and_then(parse_bool).map_err(err)?;
            state = Some(s);
            continue;
        }
        let s = state.as_mut().ok_or_else(|| err("desktop line must come first".into()))?;
        match section {
            "sheet" => {
                if rest == "grid 8x8 empty" {
                    continue;
                }
                let body = rest.strip_prefix("cell ").ok_or_else(|| err("bad sheet line".into()))?;
                let (cell, value) = body.split_once('=').ok_or_else(|| err("bad cell line".into()))?;
                s.sheet.cells.insert(cell.parse().map_err(err)?, unescape(value).map_err(err)?);
            }
            "files" => {
                if let Some(body) = rest.strip_prefix("node ") {
                    if let Some(path) = body.strip_prefix("dir ") {
                        s.files.nodes.insert(path.to_string(), Node::Dir);
                    } else if let Some(file) = body.strip_prefix("file ") {
                        let (path, t) = file.split_once('=').ok_or_else(|| err("bad file node".into()))?;
                        s.files.nodes.insert(path.to_string(), Node::File { text: unescape(t).map_err(err)? });
                    } else {
                        return Err(err("bad node line".into()));
                    }
                } else if rest.starts_with("entry ") {
                    // derived from the tree
                } else {
                    let f: Vec<&str> = rest.split(' ').collect();
                    if f.len() != 4 {
                        return Err(err("files header needs 4 fields".into()));
                    }
                    s.files.cwd = kv(f[0], "cwd").map_err(err)?.to_string();
                    s.files.selected = opt(kv(f[1], "selected").map_err(err)?);
                    s.files.clipboard = opt(kv(f[2], "clipboard").map_err(err)?);
                    s.files.prompt = match kv(f[3], "prompt").map_err(err)? {
                        "none" => None,
                        p => Some(p.parse().map_err(err)?),
                    };
                }
            }
            "editor" => {
                if let Some(body) = rest.strip_prefix("line ") {
                    let (_, t) = body.split_once('=').ok_or_else(|| err("bad editor line".into()))?;
                    if !lines_seen {
                        s.editor.lines.clear();
                        lines_seen = true;
                    }
                    s.editor.lines.push(unescape(t).map_err(err)?);
                } else {
                    let f: Vec<&str> = rest.split(' ').collect();
                    if f.len() != 3 {
                        return Err(err("editor header needs 3 fields".into()));
                    }
                    let (l, c) = kv(f[0], "cursor").map_err(err)?.split_once(':').ok_or_else(|| err("bad cursor".into()))?;
                    s.editor.cursor = (l.parse().map_err(|_| err("bad cursor".into()))?, c.parse().map_err(|_| err("bad cursor".into()))?);
                    s.editor.select_to_end = kv(f[1], "select").and_then(parse_bool).map_err(err)?;
                    s.editor.saved = kv(f[2], "saved").and_then(parse_bool).map_err(err)?;
                }
            }
            "apis" => {
                if rest != "none" {
                    s.apis = rest.split(' ').map(str::to_string).collect();
                }
            }
            other => return Err(err(format!("unknown section `{other}`"))),
        }
    }
    state.ok_or(ObservationError { line: 0, reason: "empty observation".into() })
}

/// Number of most recent actions kept in an agent context.
pub const HISTORY_LEN: usize = 2;

/// Builds the agent context `q`: goal lines, the observation, then recent actions.
pub fn format_context(goal: &[Subgoal], observation: &str, history: &[String]) -> String {
    let mut out = String::new();
    for g in goal {
        let _ = writeln!(out, "goal {g}");
    }
    out.push_str(observation);
    let start = history.len().saturating_sub(HISTORY_LEN);
    for h in &history[start..] {
        let _ = writeln!(out, "last {}", escape(h));
    }
    out
}

/// Structured reading of a context string.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextView {
    pub goal: Vec<Subgoal>,
    pub state: EnvState,
    pub history: Vec<String>,
}

impl ContextView {
    pub fn parse(text: &str) -> Result<Self, ObservationError> {
        let mut goal = vec![];
        let mut history = vec![];
        let mut obs = String::new();
        for (idx, line) in text.lines().enumerate() {
            if let Some(g) = line.strip_prefix("goal ") {
                goal.push(g.parse().map_err(|reason| ObservationError { line: idx + 1, reason })?);
            } else if let Some(h) = line.strip_prefix("last ") {
                history.push(unescape(h).map_err(|reason| ObservationError { line: idx + 1, reason })?);
            } else {
                obs.push_str(line);
                obs.push('\n');
            }
        }
        Ok(Self { goal, state: parse_observation(&obs)?, history })
    }

    pub fn unsatisfied(&self) -> impl Iterator<Item = &Subgoal> {
        self.goal.iter().filter(|g| !g.satisfied(&self.state))
    }
}
