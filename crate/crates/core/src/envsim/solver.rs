//! Scripted next-action planner over goals, for both halves of the action space.
//!
//! The planner is greedy: it picks the highest-priority unsatisfied subgoal and
//! emits the next action toward it, so it recovers from any reachable state.

use super::action::{Action, SCREEN_ROWS};
use super::state::{base_name, parent_of, App, EnvState, Focus, Prompt};
use super::task::{Subgoal, TaskSpec};
use super::{ActionSpace, ApiTable, Env, EnvError};

fn priority(g: &Subgoal) -> (u8, usize) {
    match g {
        Subgoal::Dir { path } => (0, path.matches('/').count()),
        Subgoal::File { .. } => (1, 0),
        Subgoal::Absent { .. } => (2, 0),
        Subgoal::Cell { .. } => (3, 0),
        Subgoal::Replaced { .. } => (4, 0),
        Subgoal::Line { .. } => (5, 0),
        Subgoal::Saved => (6, 0),
    }
}

/// Highest-priority unsatisfied subgoal (ties keep goal order).
pub fn next_subgoal<'a>(goal: &'a [Subgoal], state: &EnvState) -> Option<&'a Subgoal> {
    goal.iter()
        .enumerate()
        .filter(|(_, g)| !g.satisfied(state))
        .min_by_key(|(i, g)| (priority(g), *i))
        .map(|(_, g)| g)
}

/// Next scripted action, or `DONE` once every subgoal holds.
pub fn next_action(goal: &[Subgoal], state: &EnvState, use_api: bool) -> Action {
    match next_subgoal(goal, state) {
        Some(sub) => action_for(sub, goal, state, use_api),
        None => Action::done(),
    }
}

/// Source path of a pending move or rename that produces `dst`.
fn move_source(goal: &[Subgoal], state: &EnvState, dst: &str) -> Option<String> {
    goal.iter().find_map(|g| match g {
        Subgoal::Absent { path }
            if state.files.is_file(path) && (base_name(path) == base_name(dst) || parent_of(path) == parent_of(dst)) =>
        {
            Some(path.clone())
        }
        _ => None,
    })
}

fn has_api(state: &EnvState, name: &str) -> bool {
    state.apis.iter().any(|a| a == name)
}

pub fn action_for(sub: &Subgoal, goal: &[Subgoal], state: &EnvState, use_api: bool) -> Action {
    if use_api {
        if let Some(a) = api_action(sub, goal, state) {
            return a;
        }
    }
    gui_action(sub, goal, state)
}

fn api_action(sub: &Subgoal, goal: &[Subgoal], state: &EnvState) -> Option<Action> {
    let (name, args): (&str, Vec<(&str, String)>) = match sub {
        Subgoal::Dir { path } => ("files.mkdir", vec![("path", path.clone())]),
        Subgoal::File { path } => match move_source(goal, state, path) {
            Some(src) => ("files.move", vec![("src", src), ("dst", path.clone())]),
            None => ("files.create", vec![("path", path.clone())]),
        },
        Subgoal::Absent { path } => ("files.delete", vec![("path", path.clone())]),
        Subgoal::Cell { cell, value } => {
            let pending = |c| {
                goal.iter().find_map(|g| match g {
                    Subgoal::Cell { cell, value } if *cell == c && !g.satisfied(state) => Some(value.clone()),
                    _ => None,
                })
            };
            let run = |step: fn(super::CellRef) -> Option<super::CellRef>| {
                let mut values = vec![value.clone()];
                let mut c = step(*cell);
                while let Some(v) = c.and_then(pending) {
                    values.push(v);
                    c = c.and_then(step);
                }
                values
            };
            let row = run(super::CellRef::right);
            let col = run(super::CellRef::down);
            if row.len() >= 2 && row.len() >= col.len() && has_api(state, "sheet.set_range") {
                ("sheet.set_range", vec![("start", cell.to_string()), ("values", row.join("|"))])
            } else if col.len() >= 2 && has_api(state, "sheet.set_range") {
                ("sheet.set_range", vec![("start", cell.to_string()), ("values", col.join("|")), ("dir", "col".into())])
            } else {
                ("sheet.set_cell", vec![("cell", cell.to_string()), ("value", value.clone())])
            }
        }
        Subgoal::Replaced { old, new } => ("editor.replace", vec![("old", old.clone()), ("new", new.clone())]),
        Subgoal::Line { text } => ("editor.append_line", vec![("text", text.clone())]),
        Subgoal::Saved => ("editor.save", vec![]),
    };
    has_api(state, name).then(|| Action::api(name, args))
}

fn taskbar(app: App) -> Action {
    Action::click(app.taskbar_col(), SCREEN_ROWS - 1)
}

fn entry_row(state: &EnvState, path: &str) -> Option<u16> {
    let dir = parent_of(path);
    if state.files.cwd != dir {
        return None;
    }
    state.files.list(dir).iter().position(|(n, _)| n == base_name(path)).map(|i| i as u16)
}

/// One step toward making `dir` the current directory, or `None` when already there.
fn navigate(state: &EnvState, dir: &str) -> Option<Action> {
    let cwd = &state.files.cwd;
    if cwd == dir {
        return None;
    }
    let prefix = if cwd == "/" { "/".to_string() } else { format!("{cwd}/") };
    match dir.strip_prefix(&prefix) {
        Some(rest) => {
            let child = super::state::join_path(cwd, rest.split('/').next().unwrap_or(rest));
            if state.files.selected.as_deref() == Some(child.as_str()) {
                Some(Action::key("enter"))
            } else {
                entry_row(state, &child).map(|r| Action::click(0, r))
            }
        }
        None => Some(Action::key("backspace")),
    }
}

fn gui_action(sub: &Subgoal, goal: &[Subgoal], state: &EnvState) -> Action {
    let app = sub.app();
    if state.active != app {
        return taskbar(app);
    }
    match sub {
        Subgoal::Cell { cell, value } => {
            if state.focus == Focus::Cell(*cell) {
                Action::type_text(value)
            } else {
                Action::click(cell.col as u16, cell.row as u16)
            }
        }
        Subgoal::Dir { path } => files_step(state, parent_of(path), Prompt::NewDir, base_name(path)),
        Subgoal::File { path } => match move_source(goal, state, path) {
            Some(src) if base_name(&src) == base_name(path) => {
                if state.files.clipboard.as_deref() == Some(src.as_str()) {
                    if state.files.prompt.is_some() {
                        return Action::key("escape");
                    }
                    navigate(state, parent_of(path)).unwrap_or_else(|| Action::key("ctrl+v"))
                } else {
                    select_then(state, &src, "ctrl+x")
                }
            }
            Some(src) => {
                if state.files.prompt == Some(Prompt::Rename) && state.files.selected.as_deref() == Some(src.as_str()) {
                    Action::type_text(base_name(path))
                } else {
                    select_then(state, &src, "f2")
                }
            }
            None => files_step(state, parent_of(path), Prompt::NewFile, base_name(path)),
        },
        Subgoal::Absent { path } => select_then(state, path, "delete"),
        Subgoal::Replaced { old, new } => {
            let e = &state.editor;
            let Some(row) = e.lines.iter().position(|l| l.contains(old.as_str())) else {
                return Action::done();
            };
            if e.cursor == (row, 0) && e.select_to_end {
                Action::type_text(&e.lines[row].replace(old.as_str(), new))
            } else if e.cursor == (row, 0) {
                Action::key("shift+end")
            } else {
                Action::click(0, row as u16)
            }
        }
        Subgoal::Line { text } => {
            let e = &state.editor;
            let last = e.lines.len() - 1;
            let end = (last, e.line_len(last));
            if e.lines[last].is_empty() && e.cursor == (last, 0) {
                Action::type_text(text)
            } else if e.cursor == end {
                Action::key("enter")
            } else {
                Action::click(31.min(e.line_len(last)) as u16, last as u16)
            }
        }
        Subgoal::Saved => Action::key("ctrl+s"),
    }
}

/// Select `path` in its directory, then press `key`.
fn select_then(state: &EnvState, path: &str, key: &str) -> Action {
    if state.files.prompt.is_some() {
        return Action::key("escape");
    }
    if let Some(nav) = navigate(state, parent_of(path)) {
        return nav;
    }
    if state.files.selected.as_deref() == Some(path) {
        Action::key(key)
    } else {
        entry_row(state, path).map_or_else(Action::done, |r| Action::click(0, r))
    }
}

/// In `dir`, open `prompt` and type `name`.
fn files_step(state: &EnvState, dir: &str, prompt: Prompt, name: &str) -> Action {
    match state.files.prompt {
        Some(p) if p == prompt && state.files.cwd == dir => return Action::type_text(name),
        Some(_) => return Action::key("escape"),
        None => {}
    }
    if let Some(nav) = navigate(state, dir) {
        return nav;
    }
    Action::key(match prompt {
        Prompt::NewFile => "ctrl+n",
        Prompt::NewDir => "ctrl+shift+n",
        Prompt::Rename => "f2",
    })
}

/// Runs the planner from the task's initial state, ignoring the step budget, and
/// returns the actions it took (without the final `DONE`).
pub fn scripted_solution(task: &TaskSpec, space: ActionSpace) -> Result<Vec<Action>, EnvError> {
    let unbounded = TaskSpec { max_steps: 256, ..task.clone() };
    let mut env = Env::new(&unbounded, 0, space, std::sync::Arc::new(ApiTable::builtin()))?;
    let mut actions = vec![];
    while actions.len() < 128 {
        let a = next_action(&task.goal, env.state(), space == ActionSpace::ApiGui);
        if a.kind == Some(super::ActionKind::Terminate) {
            break;
        }
        env.step(&a)?;
        actions.push(a);
    }
    Ok(actions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsim::{create_env, Domain, InitialState};

    #[test]
    fn solves_sheet_row_with_one_api_call() {
        let task = TaskSpec {
            task_id: "t".into(),
            app: App::Sheet,
            domain: Domain::Office,
            goal: vec![
                Subgoal::Cell { cell: "A1".parse().unwrap(), value: "Month".into() },
                Subgoal::Cell { cell: "B1".parse().unwrap(), value: "Total".into() },
            ],
            initial_state: InitialState::default(),
            max_steps: 10,
            verifier_id: "all_of".into(),
        };
        let api = scripted_solution(&task, ActionSpace::ApiGui).unwrap();
        assert_eq!(api.len(), 1);
        assert_eq!(api[0].raw_text, "API sheet.set_range(start=A1,values=\"Month|Total\")");
        let gui = scripted_solution(&task, ActionSpace::GuiOnly).unwrap();
        assert_eq!(gui.len(), 4);
        let mut env = create_env(&task, 0).unwrap();
        for a in &gui {
            env.step(a).unwrap();
        }
        assert_eq!(env.verify(), 1.0);
    }
}
