//! Deterministic simulated desktop with a hybrid API-GUI action space.
//!
//! Screen layout on the 32x24 click grid:
//! - last row is the taskbar: column 0 sheet, 1 files, 2 editor;
//! - sheet: cell `(c, r)` sits at click `(c, r)` for `c, r < 8`;
//! - files: entry `i` of the current directory listing sits on row `i`, columns 0..16;
//! - editor: line `r` sits on row `r`; the click column places the cursor (clamped).

pub mod action;
pub mod api;
pub mod observation;
pub mod reward;
pub mod solver;
pub mod state;
pub mod suite;
pub mod task;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use action::{Action, ActionKind, ApiCall, GuiAction, SCREEN_COLS, SCREEN_ROWS};
pub use api::{ApiArtifact, ApiLogEntry, ApiTable};
pub use observation::{format_context, parse_observation, serialize_observation, ContextView};
pub use reward::assign_rewards;
pub use state::{App, CellRef, EnvState, Focus, Prompt};
pub use suite::{task_suite, SuiteProfile};
pub use task::{lookup_verifier, Domain, InitialState, Subgoal, TaskSpec};

use state::{join_path, parent_of, valid_name};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnvError {
    #[error("unknown verifier `{0}`")]
    UnknownVerifier(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("episode already finished")]
    EpisodeFinished,
}

/// Which half of the hybrid action space the environment accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSpace {
    GuiOnly,
    #[default]
    ApiGui,
}

/// Outcome of one step together with the observation text it produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub observation: String,
    pub done: bool,
    pub accepted: bool,
    pub malformed: bool,
}

/// A live environment instance. Single-threaded; move it between threads between steps.
#[derive(Debug, Clone)]
pub struct Env {
    task: TaskSpec,
    seed: u64,
    space: ActionSpace,
    apis: Arc<ApiTable>,
    state: EnvState,
    api_log: Vec<ApiLogEntry>,
}

/// Creates an environment in the task's initial state with the full API-GUI action space.
pub fn create_env(task: &TaskSpec, seed: u64) -> Result<Env, EnvError> {
    Env::new(task, seed, ActionSpace::ApiGui, Arc::new(ApiTable::builtin()))
}

impl Env {
    pub fn new(task: &TaskSpec, seed: u64, space: ActionSpace, apis: Arc<ApiTable>) -> Result<Self, EnvError> {
        if lookup_verifier(&task.verifier_id).is_none() {
            return Err(EnvError::UnknownVerifier(task.verifier_id.clone()));
        }
        task.check().map_err(EnvError::InvalidTask)?;
        let names = match space {
            ActionSpace::GuiOnly => vec![],
            ActionSpace::ApiGui => apis.names(),
        };
        let state = task
            .initial_state
            .build(task.app, task.max_steps, names, seed)
            .map_err(EnvError::InvalidTask)?;
        Ok(Self { task: task.clone(), seed, space, apis, state, api_log: vec![] })
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn action_space(&self) -> ActionSpace {
        self.space
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn api_log(&self) -> &[ApiLogEntry] {
        &self.api_log
    }

    pub fn observation(&self) -> String {
        serialize_observation(&self.state)
    }

    /// Restores the initial state (same task, same seed).
    pub fn reset(&mut self) {
        let fresh = Env::new(&self.task, self.seed, self.space, self.apis.clone()).expect("task validated at creation");
        *self = fresh;
    }

    pub fn step(&mut self, action: &Action) -> Result<StepOutcome, EnvError> {
        if self.state.done {
            return Err(EnvError::EpisodeFinished);
        }
        let (accepted, malformed) = match &action.kind {
            None => (false, true),
            Some(ActionKind::Terminate) => {
                self.state.done = true;
                (true, false)
            }
            Some(ActionKind::Api(call)) => (self.apply_api(call), false),
            Some(ActionKind::Gui(g)) => (self.apply_gui(g), false),
        };
        self.state.step_count += 1;
        if self.state.step_count >= self.state.max_steps {
            self.state.done = true;
        }
        Ok(StepOutcome { observation: self.observation(), done: self.state.done, accepted, malformed })
    }

    /// Accuracy of the current state against the goal.
    pub fn verify(&self) -> f64 {
        verify_state(&self.task, &self.state)
    }

    fn apply_api(&mut self, call: &ApiCall) -> bool {
        if self.space == ActionSpace::GuiOnly {
            return false;
        }
        self.apis.invoke(&mut self.state, call, &mut self.api_log).is_ok()
    }

    fn apply_gui(&mut self, g: &GuiAction) -> bool {
        let before = self.state.clone();
        let applied = match g {
            GuiAction::Click { col, row } => self.click(*col, *row),
            GuiAction::Type(text) => self.type_text(text),
            GuiAction::Key(combo) => self.key(combo),
            // Every view fits on screen, so there is never anything to scroll.
            GuiAction::Scroll(_) => false,
        };
        if !applied || self.state == before {
            self.state = before;
            return false;
        }
        true
    }

    fn activate(&mut self, app: App) {
        self.state.active = app;
        self.state.focus = match app {
            App::Files if self.state.files.prompt.is_some() => Focus::Prompt,
            other => Focus::default_for(other),
        };
    }

    fn click(&mut self, col: u16, row: u16) -> bool {
        if row == SCREEN_ROWS - 1 {
            return match App::ALL.iter().find(|a| a.taskbar_col() == col) {
                Some(&app) if app != self.state.active => {
                    self.activate(app);
                    true
                }
                _ => false,
            };
        }
        let s = &mut self.state;
        match s.active {
            App::Sheet => match CellRef::new(col as u8, row as u8).filter(|_| col < 8 && row < 8) {
                Some(cell) => {
                    s.focus = Focus::Cell(cell);
                    true
                }
                None => false,
            },
            App::Files => {
                let entries = s.files.list(&s.files.cwd);
                match entries.get(row as usize).filter(|_| col < 16) {
                    Some((name, _)) => {
                        s.files.selected = Some(join_path(&s.files.cwd, name));
                        s.files.prompt = None;
                        s.focus = Focus::List;
                        true
                    }
                    None => false,
                }
            }
            App::Editor => {
                if (row as usize) < s.editor.lines.len() {
                    let r = row as usize;
                    s.editor.cursor = (r, (col as usize).min(s.editor.line_len(r)));
                    s.editor.select_to_end = false;
                    s.focus = Focus::Text;
                    true
                } else {
                    false
                }
            }
        }
    }

    fn type_text(&mut self, text: &str) -> bool {
        let s = &mut self.state;
        match (s.active, s.focus) {
            (App::Sheet, Focus::Cell(cell)) => {
                s.sheet.set(cell, text);
                true
            }
            (App::Files, Focus::Prompt) => {
                let Some(prompt) = s.files.prompt else { return false };
                if !valid_name(text) {
                    return false;
                }
                let path = join_path(&s.files.cwd, text);
                let ok = match prompt {
                    Prompt::NewFile => !s.files.exists(&path) && s.files.create_file(&path, "").is_ok(),
                    Prompt::NewDir => s.files.mkdir(&path).is_ok(),
                    Prompt::Rename => match s.files.selected.clone() {
                        Some(src) => s.files.rename(&src, &path).is_ok(),
                        None => false,
                    },
                };
                if ok {
                    s.files.prompt = None;
                    s.files.selected = Some(path);
                    s.focus = Focus::List;
                }
                ok
            }
            (App::Editor, Focus::Text) if !text.contains('\n') => {
                s.editor.insert(text);
                true
            }
            _ => false,
        }
    }

    fn key(&mut self, combo: &str) -> bool {
        let s = &mut self.state;
        match s.active {
            App::Sheet => {
                let Focus::Cell(cell) = s.focus else { return false };
                match combo {
                    "enter" => cell.down().map(|c| s.focus = Focus::Cell(c)).is_some(),
                    "tab" => cell.right().map(|c| s.focus = Focus::Cell(c)).is_some(),
                    "delete" => s.sheet.cells.remove(&cell).is_some(),
                    _ => false,
                }
            }
            App::Files => {
                let f = &mut s.files;
                if f.prompt.is_some() {
                    if combo == "escape" {
                        f.prompt = None;
                        s.focus = Focus::List;
                        return true;
                    }
                    return false;
                }
                match combo {
                    "enter" => match f.selected.clone() {
                        Some(sel) if f.is_dir(&sel) => {
                            f.cwd = sel;
                            f.selected = None;
                            true
                        }
                        _ => false,
                    },
                    "backspace" => {
                        if f.cwd == "/" {
                            return false;
                        }
                        let up = parent_of(&f.cwd).to_string();
                        f.selected = Some(std::mem::replace(&mut f.cwd, up));
                        true
                    }
                    "ctrl+n" | "ctrl+shift+n" => {
                        f.prompt = Some(if combo == "ctrl+n" { Prompt::NewFile } else { Prompt::NewDir });
                        s.focus = Focus::Prompt;
                        true
                    }
                    "f2" if f.selected.is_some() => {
                        f.prompt = Some(Prompt::Rename);
                        s.focus = Focus::Prompt;
                        true
                    }
                    "delete" => match f.selected.clone() {
                        Some(sel) => f.remove(&sel).is_ok(),
                        None => false,
                    },
                    "ctrl+x" => match f.selected.clone() {
                        Some(sel) => {
                            f.clipboard = Some(sel);
                            true
                        }
                        None => false,
                    },
                    "ctrl+v" => match f.clipboard.clone() {
                        Some(src) => {
                            let dst = join_path(&f.cwd, state::base_name(&src));
                            if f.rename(&src, &dst).is_ok() {
                                f.clipboard = None;
                                f.selected = Some(dst);
                                true
                            } else {
                                false
                            }
                        }
                        None => false,
                    },
                    _ => false,
                }
            }
            App::Editor => {
                let e = &mut s.editor;
                match combo {
                    "enter" => {
                        e.newline();
                        true
                    }
                    "backspace" => e.backspace(),
                    "ctrl+s" => {
                        e.saved = true;
                        true
                    }
                    "home" => {
                        e.cursor.1 = 0;
                        true
                    }
                    "end" => {
                        e.cursor.1 = e.line_len(e.cursor.0);
                        true
                    }
                    "shift+end" => {
                        e.select_to_end = e.cursor.1 < e.line_len(e.cursor.0);
                        true
                    }
                    "ctrl+end" => {
                        let last = e.lines.len() - 1;
                        e.cursor = (last, e.line_len(last));
                        true
                    }
                    _ => false,
                }
            }
        }
    }
}

/// Pure verification: accuracy of `state` against the task goal via its registered verifier.
pub fn verify_state(task: &TaskSpec, state: &EnvState) -> f64 {
    let verifier = lookup_verifier(&task.verifier_id).expect("verifier checked at env creation");
    verifier(&task.goal, state)
}
