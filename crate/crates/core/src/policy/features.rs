//! Candidate enumeration and hashed (context, action) features.
//!
//! Features are sparse binary indicators hashed into `dim` buckets with FNV-1a.
//! Besides the action's coarse kind they carry relational tags that relate the
//! action to the goal and the visible state (e.g. "this click selects a file the
//! goal wants gone"), standing in for what a language model reads off the screen.

use std::collections::BTreeSet;

use crate::envsim::state::{base_name, parent_of};
use crate::envsim::{Action, ActionKind, App, CellRef, ContextView, Focus, GuiAction, Prompt, Subgoal, SCREEN_ROWS};

/// Hard cap on candidates per state.
pub const MAX_CANDIDATES: usize = 64;
/// Default hash dimension (2^16).
pub const DEFAULT_DIM: usize = 1 << 16;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    fnv_extend(FNV_OFFSET, bytes)
}

fn fnv_extend(mut h: u64, bytes: &[u8]) -> u64 {
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Bucket for a feature named by `parts` joined with a unit separator.
pub fn hash_feature(parts: &[&str], dim: usize) -> u32 {
    let mut h = FNV_OFFSET;
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            h = fnv_extend(h, &[0x1f]);
        }
        h = fnv_extend(h, p.as_bytes());
    }
    (h % dim as u64) as u32
}

/// Sparse feature rows, one per candidate (indices may repeat).
pub type FeatureRows = Vec<Vec<u32>>;

/// What the goal still asks for, relative to the visible state.
struct Analysis<'a> {
    view: &'a ContextView,
    unsat: Vec<&'a Subgoal>,
    content_remaining: usize,
    has_save_goal: bool,
    save_pending: bool,
    work_apps: BTreeSet<App>,
    work_dirs: BTreeSet<String>,
    mkdir_in: BTreeSet<(String, String)>,
    newfile_in: BTreeSet<(String, String)>,
    renames: Vec<(String, String)>,
    moves: Vec<(String, String)>,
    deletes: BTreeSet<String>,
}

impl<'a> Analysis<'a> {
    fn new(view: &'a ContextView) -> Self {
        let s = &view.state;
        let unsat: Vec<&Subgoal> = view.goal.iter().filter(|g| !g.satisfied(s)).collect();
        let has_save_goal = view.goal.contains(&Subgoal::Saved);
        let mut a = Analysis {
            view,
            content_remaining: unsat.iter().filter(|g| !matches!(g, Subgoal::Saved)).count(),
            save_pending: has_save_goal && !s.editor.saved,
            has_save_goal,
            work_apps: BTreeSet::new(),
            work_dirs: BTreeSet::new(),
            mkdir_in: BTreeSet::new(),
            newfile_in: BTreeSet::new(),
            renames: vec![],
            moves: vec![],
            deletes: BTreeSet::new(),
            unsat,
        };
        let mut sources = BTreeSet::new();
        for g in a.unsat.clone() {
            a.work_apps.insert(g.app());
            match g {
                Subgoal::Dir { path } if s.files.is_dir(parent_of(path)) => {
                    a.mkdir_in.insert((parent_of(path).to_string(), base_name(path).to_string()));
                }
                Subgoal::File { path } => {
                    let src = view.goal.iter().find_map(|h| match h {
                        Subgoal::Absent { path: p }
                            if s.files.is_file(p) && (base_name(p) == base_name(path) || parent_of(p) == parent_of(path)) =>
                        {
                            Some(p.clone())
                        }
                        _ => None,
                    });
                    match src {
                        Some(src) if parent_of(&src) == parent_of(path) => {
                            sources.insert(src.clone());
                            a.renames.push((src, path.clone()));
                        }
                        Some(src) => {
                            sources.insert(src.clone());
                            a.moves.push((src, path.clone()));
                        }
                        None if s.files.is_dir(parent_of(path)) => {
                            a.newfile_in.insert((parent_of(path).to_string(), base_name(path).to_string()));
                        }
                        None => {}
                    }
                }
                _ => {}
            }
        }
        for g in &a.unsat {
            if let Subgoal::Absent { path } = g {
                if !sources.contains(path) {
                    a.deletes.insert(path.clone());
                }
            }
        }
        for (d, _) in a.mkdir_in.iter().chain(&a.newfile_in) {
            a.work_dirs.insert(d.clone());
        }
        for (src, _) in &a.renames {
            a.work_dirs.insert(parent_of(src).to_string());
        }
        for (src, dst) in &a.moves {
            let dir = if s.files.clipboard.as_deref() == Some(src.as_str()) { parent_of(dst) } else { parent_of(src) };
            a.work_dirs.insert(dir.to_string());
        }
        for p in &a.deletes {
            a.work_dirs.insert(parent_of(p).to_string());
        }
        a
    }

    fn has_work(&self, app: App) -> bool {
        self.work_apps.contains(&app)
    }

    fn cell_goal(&self, cell: CellRef) -> Option<(&str, bool)> {
        self.view.goal.iter().find_map(|g| match g {
            Subgoal::Cell { cell: c, value } if *c == cell => Some((value.as_str(), g.satisfied(&self.view.state))),
            _ => None,
        })
    }

    fn on_work_path(&self, p: &str) -> bool {
        self.work_dirs.iter().any(|w| w == p || w.starts_with(&format!("{p}/")))
    }

    fn pending_lines(&self) -> impl Iterator<Item = &str> {
        self.unsat.iter().filter_map(|g| match g {
            Subgoal::Line { text } => Some(text.as_str()),
            _ => None,
        })
    }

    fn pending_olds(&self) -> impl Iterator<Item = (&str, &str)> {
        self.unsat.iter().filter_map(|g| match g {
            Subgoal::Replaced { old, new } => Some((old.as_str(), new.as_str())),
            _ => None,
        })
    }

    fn save_tag(&self) -> &'static str {
        match (self.has_save_goal, self.view.state.editor.saved) {
            (_, true) => "save_clean",
            (false, false) => "save_nogoal",
            (true, false) if self.content_remaining == 0 => "save_final",
            (true, false) => "save_early",
        }
    }
}

fn push(out: &mut Vec<String>, a: Action) {
    if !out.contains(&a.raw_text) {
        out.push(a.raw_text);
    }
}

/// Candidate action texts for the state in `view`, capped at [`MAX_CANDIDATES`].
pub fn enumerate_candidates(view: &ContextView) -> Vec<String> {
    let s = &view.state;
    let mut out = vec![];
    push(&mut out, Action::done());
    push(&mut out, Action::scroll(1));
    for app in App::ALL {
        if app != s.active {
            push(&mut out, Action::click(app.taskbar_col(), SCREEN_ROWS - 1));
        }
    }
    let goal_cells: Vec<(CellRef, &str)> = view
        .goal
        .iter()
        .filter_map(|g| match g {
            Subgoal::Cell { cell, value } => Some((*cell, value.as_str())),
            _ => None,
        })
        .collect();
    match s.active {
        App::Sheet => {
            let mut cells: Vec<CellRef> = goal_cells.iter().map(|(c, _)| *c).collect();
            if let Focus::Cell(f) = s.focus {
                cells.extend(f.right());
                cells.extend(f.down());
            }
            cells.push(CellRef { col: 0, row: 0 });
            for c in cells {
                push(&mut out, Action::click(c.col.into(), c.row.into()));
            }
            for (_, v) in &goal_cells {
                push(&mut out, Action::type_text(v));
            }
            for k in ["enter", "tab", "delete"] {
                push(&mut out, Action::key(k));
            }
        }
        App::Files => {
            for i in 0..s.files.list(&s.files.cwd).len().min(10) {
                push(&mut out, Action::click(0, i as u16));
            }
            for k in ["enter", "backspace", "ctrl+n", "ctrl+shift+n", "f2", "delete", "ctrl+x", "ctrl+v", "escape"] {
                push(&mut out, Action::key(k));
            }
            for g in &view.goal {
                if let Subgoal::File { path } | Subgoal::Dir { path } = g {
                    push(&mut out, Action::type_text(base_name(path)));
                }
            }
        }
        App::Editor => {
            let e = &s.editor;
            for r in 0..e.lines.len().min(8) {
                push(&mut out, Action::click(0, r as u16));
            }
            let last = e.lines.len() - 1;
            push(&mut out, Action::click(e.line_len(last).min(31) as u16, last as u16));
            for k in ["enter", "backspace", "shift+end", "ctrl+s", "end"] {
                push(&mut out, Action::key(k));
            }
            for g in &view.goal {
                match g {
                    Subgoal::Line { text } => push(&mut out, Action::type_text(text)),
                    Subgoal::Replaced { old, new } => {
                        for l in e.lines.iter().filter(|l| l.contains(old.as_str())) {
                            push(&mut out, Action::type_text(&l.replace(old.as_str(), new)));
                        }
                    }
                    _ => {}
                }
            }
        }
    }
    let has = |n: &str| s.apis.iter().any(|a| a == n);
    if !s.apis.is_empty() {
        let cells: BTreeSet<CellRef> = goal_cells.iter().map(|(c, _)| *c).collect();
        let value = |c: CellRef| goal_cells.iter().find(|(g, _)| *g == c).map(|(_, v)| v.to_string());
        for &(c, v) in &goal_cells {
            if has("sheet.set_cell") {
                push(&mut out, Action::api("sheet.set_cell", [("cell", c.to_string()), ("value", v.to_string())]));
            }
            if has("sheet.set_range") {
                for (step, back, dir) in [
                    (CellRef::right as fn(CellRef) -> Option<CellRef>, c.col.checked_sub(1).map(|x| CellRef { col: x, row: c.row }), "row"),
                    (CellRef::down, c.row.checked_sub(1).map(|y| CellRef { col: c.col, row: y }), "col"),
                ] {
                    if back.is_some_and(|b| cells.contains(&b)) {
                        continue;
                    }
                    let mut values = vec![v.to_string()];
                    let mut n = step(c);
                    while let Some(v) = n.filter(|x| cells.contains(x)).and_then(value) {
                        values.push(v);
                        n = n.and_then(step);
                    }
                    if values.len() >= 2 {
                        let mut args = vec![("start", c.to_string()), ("values", values.join("|"))];
                        if dir == "col" {
                            args.push(("dir", "col".to_string()));
                        }
                        push(&mut out, Action::api("sheet.set_range", args));
                    }
                }
            }
            if has("sheet.clear") {
                push(&mut out, Action::api("sheet.clear", [("cell", c.to_string())]));
            }
        }
        let mut absents = vec![];
        for g in &view.goal {
            match g {
                Subgoal::Dir { path } if has("files.mkdir") => push(&mut out, Action::api("files.mkdir", [("path", path.clone())])),
                Subgoal::File { path } => {
                    if has("files.create") {
                        push(&mut out, Action::api("files.create", [("path", path.clone())]));
                    }
                    if has("files.delete") {
                        push(&mut out, Action::api("files.delete", [("path", path.clone())]));
                    }
                }
                Subgoal::Absent { path } => {
                    absents.push(path.clone());
                    if has("files.delete") {
                        push(&mut out, Action::api("files.delete", [("path", path.clone())]));
                    }
                }
                Subgoal::Line { text } if has("editor.append_line") => {
                    push(&mut out, Action::api("editor.append_line", [("text", text.clone())]))
                }
                Subgoal::Replaced { old, new } if has("editor.replace") => {
                    push(&mut out, Action::api("editor.replace", [("old", old.clone()), ("new", new.clone())]))
                }
                _ => {}
            }
        }
        if has("files.move") {
            for g in &view.goal {
                if let Subgoal::File { path } = g {
                    for src in &absents {
                        if base_name(src) == base_name(path) || parent_of(src) == parent_of(path) {
                            push(&mut out, Action::api("files.move", [("src", src.clone()), ("dst", path.clone())]));
                        }
                    }
                }
            }
        }
        if has("editor.save") {
            push(&mut out, Action::api("editor.save", []));
        }
    }
    // One sloppy emission per state, as a language model occasionally produces.
    out.push(match s.active {
        App::Sheet => "CLICK(0,0".to_string(),
        App::Files => "KEY(enter)".to_string(),
        App::Editor => "TYPE(\"unterminated".to_string(),
    });
    out.truncate(MAX_CANDIDATES);
    out
}

/// `candidates` with `action` guaranteed present; returns its index.
pub fn include_action(candidates: &mut Vec<String>, action: &str) -> usize {
    if let Some(i) = candidates.iter().position(|c| c == action) {
        return i;
    }
    if candidates.len() >= MAX_CANDIDATES {
        candidates.pop();
    }
    candidates.push(action.to_string());
    candidates.len() - 1
}

fn coarse_kind(a: &Action) -> String {
    match &a.kind {
        None => "malformed".into(),
        Some(ActionKind::Terminate) => "done".into(),
        Some(ActionKind::Api(c)) => format!("api:{}", c.name),
        Some(ActionKind::Gui(g)) => match g {
            GuiAction::Click { row, .. } if *row == SCREEN_ROWS - 1 => "click_taskbar".into(),
            GuiAction::Click { .. } => "click".into(),
            GuiAction::Type(_) => "type".into(),
            GuiAction::Key(k) => format!("key:{k}"),
            GuiAction::Scroll(_) => "scroll".into(),
        },
    }
}

fn api_cell_writes(c: &crate::envsim::ApiCall) -> Option<Vec<(CellRef, String)>> {
    let arg = |k: &str| c.args.get(k).map(String::as_str);
    match c.name.as_str() {
        "sheet.set_cell" => Some(vec![(arg("cell")?.parse().ok()?, arg("value")?.to_string())]),
        "sheet.set_range" => {
            let mut cell: CellRef = arg("start")?.parse().ok()?;
            let col = arg("dir") == Some("col");
            let mut out = vec![];
            for (i, v) in arg("values")?.split('|').enumerate() {
                if i > 0 {
                    cell = if col { cell.down()? } else { cell.right()? };
                }
                out.push((cell, v.to_string()));
            }
            Some(out)
        }
        "sheet.clear" => Some(vec![(arg("cell")?.parse().ok()?, String::new())]),
        _ => None,
    }
}

fn relations(an: &Analysis, a: &Action) -> Vec<&'static str> {
    let s = &an.view.state;
    let mut t = vec![];
    let Some(kind) = &a.kind else {
        return t;
    };
    match kind {
        ActionKind::Terminate => {
            t.push(match an.content_remaining {
                0 => "done_r0",
                1 => "done_r1",
                _ => "done_r2",
            });
            if an.save_pending {
                t.push("done_unsaved");
            }
        }
        ActionKind::Gui(GuiAction::Click { col, row }) if *row == SCREEN_ROWS - 1 => {
            let target = App::ALL.iter().copied().find(|x| x.taskbar_col() == *col);
            t.push(if target.is_some_and(|x| an.has_work(x)) { "tb_work" } else { "tb_nowork" });
            t.push(if an.has_work(s.active) { "tb_active_busy" } else { "tb_active_idle" });
        }
        ActionKind::Gui(g) => {
            if !an.has_work(s.active) {
                t.push("idle_app");
            }
            match s.active {
                App::Sheet => sheet_relations(an, g, &mut t),
                App::Files => files_relations(an, g, &mut t),
                App::Editor => editor_relations(an, g, &mut t),
            }
        }
        ActionKind::Api(c) => api_relations(an, c, &mut t),
    }
    t
}

fn sheet_relations(an: &Analysis, g: &GuiAction, t: &mut Vec<&'static str>) {
    let s = &an.view.state;
    let focus_cell = match s.focus {
        Focus::Cell(c) => Some(c),
        _ => None,
    };
    if focus_cell.and_then(|c| an.cell_goal(c)).is_some_and(|(_, sat)| !sat) {
        t.push("focus_pending");
    }
    match g {
        GuiAction::Click { col, row } => {
            let cell = CellRef { col: *col as u8, row: *row as u8 };
            t.push(match an.cell_goal(cell) {
                Some((_, false)) => "cell_unsat",
                Some((_, true)) => "cell_sat",
                None => "cell_nongoal",
            });
            if focus_cell == Some(cell) {
                t.push("is_focus");
            }
        }
        GuiAction::Type(v) => t.push(match focus_cell.and_then(|c| an.cell_goal(c)) {
            Some((want, false)) if want == v => "type_fix",
            Some((want, true)) if want == v => "type_redundant",
            Some(_) => "type_wrong",
            None if focus_cell.is_some() => "type_nongoal",
            None => "type_nofocus",
        }),
        _ => t.push("sheet_key"),
    }
}

fn files_relations(an: &Analysis, g: &GuiAction, t: &mut Vec<&'static str>) {
    let f = &an.view.state.files;
    let sel = f.selected.as_deref();
    let is_src = |p: &str| an.renames.iter().chain(&an.moves).any(|(s, _)| s == p);
    if f.prompt.is_some() {
        t.push("prompt_open");
    }
    match g {
        GuiAction::Click { row, .. } => {
            let entry = f.list(&f.cwd).get(*row as usize).map(|(n, _)| crate::envsim::state::join_path(&f.cwd, n));
            match entry {
                Some(p) => {
                    if an.deletes.contains(&p) || is_src(&p) && f.clipboard.as_deref() != Some(p.as_str()) {
                        t.push("entry_target");
                    } else if an.on_work_path(&p) {
                        t.push("entry_work");
                    } else {
                        t.push("entry_other");
                    }
                    if sel == Some(p.as_str()) {
                        t.push("is_selected");
                    }
                }
                None => t.push("entry_none"),
            }
        }
        GuiAction::Key(k) => t.push(match k.as_str() {
            "enter" => match sel {
                Some(p) if f.is_dir(p) && an.on_work_path(p) => "enter_work",
                Some(p) if f.is_dir(p) => "enter_other",
                _ => "enter_nodir",
            },
            "backspace" if f.cwd == "/" => "up_root",
            "backspace" if !an.work_dirs.iter().any(|w| an.work_below_dir(w, &f.cwd)) => "up_work",
            "backspace" => "up_other",
            "ctrl+n" if an.newfile_in.iter().any(|(d, _)| *d == f.cwd) => "new_file_work",
            "ctrl+shift+n" if an.mkdir_in.iter().any(|(d, _)| *d == f.cwd) => "new_dir_work",
            "f2" if sel.is_some_and(|p| an.renames.iter().any(|(s, _)| s == p)) => "rename_work",
            "delete" => match sel {
                Some(p) if an.deletes.contains(p) => "delete_work",
                Some(p) if is_src(p) => "delete_src",
                _ => "delete_other",
            },
            "ctrl+x" if sel.is_some_and(|p| an.moves.iter().any(|(s, _)| s == p)) && f.clipboard.as_deref() != sel => {
                "cut_work"
            }
            "ctrl+v" if an.moves.iter().any(|(s, d)| f.clipboard.as_deref() == Some(s.as_str()) && parent_of(d) == f.cwd) => {
                "paste_work"
            }
            "escape" if f.prompt.is_some() => "esc_prompt",
            _ => "files_key_other",
        }),
        GuiAction::Type(name) => t.push(match f.prompt {
            Some(Prompt::NewFile) if an.newfile_in.contains(&(f.cwd.clone(), name.clone())) => "name_work",
            Some(Prompt::NewDir) if an.mkdir_in.contains(&(f.cwd.clone(), name.clone())) => "name_work",
            Some(Prompt::Rename)
                if an.renames.iter().any(|(s, d)| Some(s.as_str()) == sel && base_name(d) == name) =>
            {
                "name_work"
            }
            Some(_) => "name_wrong",
            None => "type_noprompt",
        }),
        GuiAction::Scroll(_) => {}
    }
}

impl Analysis<'_> {
    /// Whether work dir `w` lies at or below `dir`.
    fn work_below_dir(&self, w: &str, dir: &str) -> bool {
        w == dir || dir == "/" || w.starts_with(&format!("{dir}/"))
    }
}

fn editor_relations(an: &Analysis, g: &GuiAction, t: &mut Vec<&'static str>) {
    let e = &an.view.state.editor;
    let last = e.lines.len() - 1;
    let has_old = |r: usize| an.pending_olds().any(|(o, _)| e.lines[r].contains(o));
    let lines_pending = an.pending_lines().next().is_some();
    match g {
        GuiAction::Click { col, row } => {
            let r = *row as usize;
            if r < e.lines.len() && has_old(r) {
                t.push(if *col == 0 { "line_old_start" } else { "line_old" });
            } else if r == last && *col as usize >= e.line_len(last).min(31) && lines_pending {
                t.push("line_end_pending");
            } else {
                t.push("line_other");
            }
            if e.cursor == (r, (*col as usize).min(e.line_len(r.min(last)))) {
                t.push("is_cursor");
            }
        }
        GuiAction::Key(k) => t.push(match k.as_str() {
            "shift+end" if e.cursor.1 == 0 && has_old(e.cursor.0) && !e.select_to_end => "select_old",
            "enter" if e.cursor == (last, e.line_len(last)) && !e.lines[last].is_empty() && lines_pending => "newline_work",
            "ctrl+s" => an.save_tag(),
            _ => "edit_key_other",
        }),
        GuiAction::Type(text) => {
            let row = e.cursor.0;
            let replace_ready = e.select_to_end
                && e.cursor.1 == 0
                && an.pending_olds().any(|(o, n)| e.lines[row].contains(o) && e.lines[row].replace(o, n) == *text);
            let line_ready = e.lines[last].is_empty() && e.cursor == (last, 0) && an.pending_lines().any(|l| l == text);
            t.push(if replace_ready {
                "type_replace"
            } else if line_ready {
                "type_line"
            } else {
                "type_wrong"
            });
        }
        GuiAction::Scroll(_) => {}
    }
}

fn api_relations(an: &Analysis, c: &crate::envsim::ApiCall, t: &mut Vec<&'static str>) {
    let s = &an.view.state;
    let arg = |k: &str| c.args.get(k).map(String::as_str).unwrap_or("");
    if let Some(writes) = api_cell_writes(c) {
        let mut fixed = 0;
        let mut wrong = 0;
        for (cell, v) in &writes {
            match an.cell_goal(*cell) {
                Some((want, false)) if want == v => fixed += 1,
                Some((want, true)) if want == v => {}
                _ => wrong += 1,
            }
        }
        t.push(match (fixed, wrong) {
            (_, w) if w > 0 => "api_harm",
            (0, _) => "api_noop",
            (1, _) => "api_fix",
            _ => "api_fix_multi",
        });
        return;
    }
    let unsat = |g: &Subgoal| an.unsat.contains(&g);
    t.push(match c.name.as_str() {
        "files.mkdir" => {
            let p = arg("path");
            if !unsat(&Subgoal::Dir { path: p.into() }) {
                "api_noop"
            } else if s.files.is_dir(parent_of(p)) {
                "api_fix"
            } else {
                "api_blocked"
            }
        }
        "files.create" => {
            let p = arg("path");
            if !unsat(&Subgoal::File { path: p.into() }) {
                "api_noop"
            } else if s.files.is_dir(parent_of(p)) {
                "api_fix"
            } else {
                "api_blocked"
            }
        }
        "files.delete" => {
            let p = arg("path");
            if an.view.goal.contains(&Subgoal::File { path: p.into() }) {
                "api_harm"
            } else if an.deletes.contains(p) {
                "api_fix"
            } else if unsat(&Subgoal::Absent { path: p.into() }) {
                "api_delete_src"
            } else {
                "api_noop"
            }
        }
        "files.move" => {
            let (src, dst) = (arg("src"), arg("dst"));
            if an.moves.iter().chain(&an.renames).any(|(s, d)| s == src && d == dst) {
                "api_fix_multi"
            } else {
                "api_noop"
            }
        }
        "editor.append_line" => {
            if an.pending_lines().any(|l| l == arg("text")) {
                "api_fix"
            } else {
                "api_noop"
            }
        }
        "editor.replace" => {
            if an.pending_olds().any(|(o, n)| o == arg("old") && n == arg("new")) {
                "api_fix"
            } else {
                "api_noop"
            }
        }
        "editor.save" => an.save_tag(),
        _ => "api_other",
    });
}

/// Encodes (context, candidate) pairs into hashed feature rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Featurizer {
    pub dim: usize,
}

impl Default for Featurizer {
    fn default() -> Self {
        Featurizer { dim: DEFAULT_DIM }
    }
}

impl Featurizer {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "feature dimension must be positive");
        Featurizer { dim }
    }

    /// Rows for every candidate; an unparseable context yields kind-only features.
    pub fn encode(&self, context: &str, candidates: &[String]) -> FeatureRows {
        match ContextView::parse(context) {
            Ok(view) => self.encode_view(&view, candidates),
            Err(_) => candidates
                .iter()
                .map(|c| vec![hash_feature(&[&coarse_kind(&Action::from_text(c))], self.dim)])
                .collect(),
        }
    }

    pub fn encode_view(&self, view: &ContextView, candidates: &[String]) -> FeatureRows {
        let an = Analysis::new(view);
        let active = view.state.active.as_str();
        let last = view.history.last().map(|h| coarse_kind(&Action::from_text(h))).unwrap_or_else(|| "start".into());
        let mode = if view.state.apis.is_empty() { "gui_only" } else { "api_gui" };
        let mut tags: Vec<&str> = view.goal.iter().map(Subgoal::tag).collect();
        tags.sort_unstable();
        tags.dedup();
        candidates
            .iter()
            .map(|c| {
                let a = Action::from_text(c);
                let k = coarse_kind(&a);
                let rel = relations(&an, &a);
                let h = |parts: &[&str]| hash_feature(parts, self.dim);
                let mut row = vec![h(&["k", &k]), h(&["ka", &k, active]), h(&["kl", &k, &last]), h(&["km", &k, mode])];
                for g in &tags {
                    row.push(h(&["kg", &k, g]));
                }
                for r in rel {
                    row.push(h(&["r", r]));
                    row.push(h(&["kr", &k, r]));
                }
                row
            })
            .collect()
    }
}
