use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::state::{parent_of, App, CellRef, EnvState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Domain {
    #[serde(rename = "OS")]
    Os,
    Office,
    Daily,
    Professional,
    Workflow,
}

impl Domain {
    pub const ALL: [Domain; 5] = [Domain::Os, Domain::Office, Domain::Daily, Domain::Professional, Domain::Workflow];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Os => "OS",
            Domain::Office => "Office",
            Domain::Daily => "Daily",
            Domain::Professional => "Professional",
            Domain::Workflow => "Workflow",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One verifiable condition on the desktop state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Subgoal {
    Cell { cell: CellRef, value: String },
    File { path: String },
    Dir { path: String },
    Absent { path: String },
    /// Some editor line equals `text`.
    Line { text: String },
    /// No editor line contains `old` and some line contains `new`.
    Replaced { old: String, new: String },
    /// The editor buffer has no unsaved changes.
    Saved,
}

impl Subgoal {
    pub fn satisfied(&self, s: &EnvState) -> bool {
        match self {
            Subgoal::Cell { cell, value } => s.sheet.get(*cell) == Some(value.as_str()),
            Subgoal::File { path } => s.files.is_file(path),
            Subgoal::Dir { path } => s.files.is_dir(path),
            Subgoal::Absent { path } => !s.files.exists(path),
            Subgoal::Line { text } => s.editor.lines.iter().any(|l| l == text),
            Subgoal::Replaced { old, new } => {
                !s.editor.lines.iter().any(|l| l.contains(old.as_str())) && s.editor.lines.iter().any(|l| l.contains(new.as_str()))
            }
            Subgoal::Saved => s.editor.saved,
        }
    }

    pub fn app(&self) -> App {
        match self {
            Subgoal::Cell { .. } => App::Sheet,
            Subgoal::File { .. } | Subgoal::Dir { .. } | Subgoal::Absent { .. } => App::Files,
            Subgoal::Line { .. } | Subgoal::Replaced { .. } | Subgoal::Saved => App::Editor,
        }
    }

    /// Short tag naming the subgoal family.
    pub fn tag(&self) -> &'static str {
        match self {
            Subgoal::Cell { .. } => "cell",
            Subgoal::File { .. } => "file",
            Subgoal::Dir { .. } => "dir",
            Subgoal::Absent { .. } => "absent",
            Subgoal::Line { .. } => "line",
            Subgoal::Replaced { .. } => "replaced",
            Subgoal::Saved => "saved",
        }
    }
}

/// Text form used in agent contexts: `cell A1=Month`, `file /a`, `replaced teh=>the`, `saved`.
impl fmt::Display for Subgoal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subgoal::Cell { cell, value } => write!(f, "cell {cell}={}", super::observation::escape(value)),
            Subgoal::File { path } => write!(f, "file {path}"),
            Subgoal::Dir { path } => write!(f, "dir {path}"),
            Subgoal::Absent { path } => write!(f, "absent {path}"),
            Subgoal::Line { text } => write!(f, "line {}", super::observation::escape(text)),
            Subgoal::Replaced { old, new } => {
                write!(f, "replaced {}=>{}", super::observation::escape(old), super::observation::escape(new))
            }
            Subgoal::Saved => f.write_str("saved"),
        }
    }
}

impl FromStr for Subgoal {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        use super::observation::unescape;
        let (tag, rest) = s.split_once(' ').unwrap_or((s, ""));
        Ok(match tag {
            "cell" => {
                let (cell, value) = rest.split_once('=').ok_or("cell goal needs `=`")?;
                Subgoal::Cell { cell: cell.parse()?, value: unescape(value)? }
            }
            "file" => Subgoal::File { path: rest.to_string() },
            "dir" => Subgoal::Dir { path: rest.to_string() },
            "absent" => Subgoal::Absent { path: rest.to_string() },
            "line" => Subgoal::Line { text: unescape(rest)? },
            "replaced" => {
                let (old, new) = rest.split_once("=>").ok_or("replaced goal needs `=>`")?;
                Subgoal::Replaced { old: unescape(old)?, new: unescape(new)? }
            }
            "saved" => Subgoal::Saved,
            other => return Err(format!("unknown goal `{other}`")),
        })
    }
}

/// Seed description of the initial desktop.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitialState {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cells: Vec<(CellRef, String)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dirs: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub files: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lines: Vec<String>,
    /// Scatter seed-dependent scratch files under `/tmp`.
    #[serde(default)]
    pub decoys: bool,
}

impl InitialState {
    pub fn build(&self, active: App, max_steps: u32, apis: Vec<String>, seed: u64) -> Result<EnvState, String> {
        let mut s = EnvState::new(active, max_steps, apis);
        for (cell, value) in &self.cells {
            s.sheet.set(*cell, value);
        }
        for d in &self.dirs {
            s.files.mkdir(d)?;
        }
        for (path, text) in &self.files {
            s.files.create_file(path, text)?;
        }
        if !self.lines.is_empty() {
            s.editor.lines = self.lines.clone();
        }
        if self.decoys {
            if !s.files.is_dir("/tmp") {
                s.files.mkdir("/tmp")?;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..rng.random_range(1..=2) {
                let name = format!("/tmp/scratch_{:04x}.log", rng.random::<u16>());
                s.files.create_file(&name, "")?;
            }
        }
        Ok(s)
    }
}

/// A verifiable synthetic desktop task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    /// App in front when the episode starts.
    pub app: App,
    pub domain: Domain,
    pub goal: Vec<Subgoal>,
    #[serde(default)]
    pub initial_state: InitialState,
    pub max_steps: u32,
    pub verifier_id: String,
}

impl TaskSpec {
    pub fn goal_text(&self) -> String {
        self.goal.iter().map(|g| format!("goal {g}\n")).collect()
    }

    /// Apps touched by the goal, in first-mention order.
    pub fn apps(&self) -> Vec<App> {
        let mut apps = vec![];
        for g in &self.goal {
            if !apps.contains(&g.app()) {
                apps.push(g.app());
            }
        }
        apps
    }

    pub(crate) fn check(&self) -> Result<(), String> {
        if self.max_steps < 1 {
            return Err("max_steps must be at least 1".into());
        }
        if self.goal.is_empty() {
            return Err("goal is empty".into());
        }
        if self.task_id.is_empty() || self.task_id.chars().any(char::is_whitespace) {
            return Err(format!("bad task id `{}`", self.task_id));
        }
        for d in &self.initial_state.dirs {
            if parent_of(d) != "/" && !self.initial_state.dirs.iter().any(|p| p == parent_of(d)) {
                return Err(format!("initial dir `{d}` has no parent"));
            }
        }
        Ok(())
    }
}

/// A verifier maps a terminal state and goal to an accuracy in [0, 1].
pub type Verifier = fn(&[Subgoal], &EnvState) -> f64;

fn all_of(goal: &[Subgoal], s: &EnvState) -> f64 {
    if goal.iter().all(|g| g.satisfied(s)) {
        1.0
    } else {
        0.0
    }
}

fn fraction(goal: &[Subgoal], s: &EnvState) -> f64 {
    if goal.is_empty() {
        return 1.0;
    }
    goal.iter().filter(|g| g.satisfied(s)).count() as f64 / goal.len() as f64
}

/// Registered verifiers: `all_of` (binary) and `fraction` (partial credit).
pub fn lookup_verifier(id: &str) -> Option<Verifier> {
    match id {
        "all_of" => Some(all_of),
        "fraction" => Some(fraction),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subgoal_text_round_trips() {
        for g in [
            Subgoal::Cell { cell: "A1".parse().unwrap(), value: "Month = 1".into() },
            Subgoal::File { path: "/docs/a.txt".into() },
            Subgoal::Dir { path: "/x".into() },
            Subgoal::Absent { path: "/tmp/old.log".into() },
            Subgoal::Line { text: "Buy milk\nnow".into() },
            Subgoal::Replaced { old: "teh".into(), new: "the".into() },
            Subgoal::Saved,
        ] {
            assert_eq!(g.to_string().parse::<Subgoal>().unwrap(), g);
        }
    }

    #[test]
    fn decoys_depend_on_seed_only() {
        let init = InitialState { decoys: true, ..Default::default() };
        let a = init.build(App::Files, 5, vec![], 1).unwrap();
        let b = init.build(App::Files, 5, vec![], 1).unwrap();
        assert_eq!(a, b);
        assert!(a.files.list("/tmp").len() >= 1);
    }
}
