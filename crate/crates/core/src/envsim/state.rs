//! Mutable desktop state: a spreadsheet, a file tree and a text editor.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Sheet dimensions (columns A..H, rows 1..8).
pub const SHEET_COLS: u8 = 8;
pub const SHEET_ROWS: u8 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum App {
    Sheet,
    Files,
    Editor,
}

impl App {
    pub const ALL: [App; 3] = [App::Sheet, App::Files, App::Editor];

    pub fn as_str(self) -> &'static str {
        match self {
            App::Sheet => "sheet",
            App::Files => "files",
            App::Editor => "editor",
        }
    }

    /// Taskbar column that activates this app (taskbar lives on the last screen row).
    pub fn taskbar_col(self) -> u16 {
        match self {
            App::Sheet => 0,
            App::Files => 1,
            App::Editor => 2,
        }
    }
}

impl fmt::Display for App {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for App {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sheet" => Ok(App::Sheet),
            "files" => Ok(App::Files),
            "editor" => Ok(App::Editor),
            other => Err(format!("unknown app `{other}`")),
        }
    }
}

/// A spreadsheet cell, zero-based column and row. Displays as `A1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellRef {
    pub col: u8,
    pub row: u8,
}

impl CellRef {
    pub fn new(col: u8, row: u8) -> Option<Self> {
        (col < SHEET_COLS && row < SHEET_ROWS).then_some(Self { col, row })
    }

    pub fn right(self) -> Option<Self> {
        Self::new(self.col + 1, self.row)
    }

    pub fn down(self) -> Option<Self> {
        Self::new(self.col, self.row + 1)
    }
}

impl fmt::Display for CellRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", (b'A' + self.col) as char, self.row + 1)
    }
}

impl FromStr for CellRef {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.chars();
        let col = chars
            .next()
            .filter(|c| c.is_ascii_uppercase())
            .ok_or_else(|| format!("bad cell `{s}`"))?;
        let row: u8 = chars.as_str().parse().map_err(|_| format!("bad cell `{s}`"))?;
        if row == 0 {
            return Err(format!("bad cell `{s}`"));
        }
        CellRef::new(col as u8 - b'A', row - 1).ok_or_else(|| format!("cell `{s}` out of range"))
    }
}

impl Serialize for CellRef {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CellRef {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sheet {
    pub cells: BTreeMap<CellRef, String>,
}

impl Sheet {
    pub fn get(&self, cell: CellRef) -> Option<&str> {
        self.cells.get(&cell).map(String::as_str)
    }

    /// Writing an empty string clears the cell.
    pub fn set(&mut self, cell: CellRef, value: &str) {
        if value.is_empty() {
            self.cells.remove(&cell);
        } else {
            self.cells.insert(cell, value.to_string());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Dir,
    File { text: String },
}

/// Pending text prompt opened by a files-app shortcut.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Prompt {
    NewFile,
    NewDir,
    Rename,
}

impl Prompt {
    pub fn as_str(self) -> &'static str {
        match self {
            Prompt::NewFile => "newfile",
            Prompt::NewDir => "newdir",
            Prompt::Rename => "rename",
        }
    }
}

impl FromStr for Prompt {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "newfile" => Ok(Prompt::NewFile),
            "newdir" => Ok(Prompt::NewDir),
            "rename" => Ok(Prompt::Rename),
            other => Err(format!("unknown prompt `{other}`")),
        }
    }
}

/// Absolute-path file tree. The root `/` is implicit and always a directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileTree {
    pub nodes: BTreeMap<String, Node>,
    pub cwd: String,
    pub selected: Option<String>,
    pub clipboard: Option<String>,
    pub prompt: Option<Prompt>,
}

impl Default for FileTree {
    fn default() -> Self {
        Self {
            nodes: BTreeMap::new(),
            cwd: "/".to_string(),
            selected: None,
            clipboard: None,
            prompt: None,
        }
    }
}

pub fn parent_of(path: &str) -> &str {
    match path.rfind('/') {
        Some(0) | None => "/",
        Some(i) => &path[..i],
    }
}

pub fn base_name(path: &str) -> &str {
    path.rsplit('/').next().unwrap_or(path)
}

pub fn join_path(dir: &str, name: &str) -> String {
    if dir == "/" {
        format!("/{name}")
    } else {
        format!("{dir}/{name}")
    }
}

/// Valid absolute path: `/seg/seg`, segments non-empty and free of whitespace.
pub fn valid_path(path: &str) -> bool {
    path.starts_with('/')
        && path.len() > 1
        && path[1..]
            .split('/')
            .all(valid_name)
}

pub fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name != "."
        && name != ".."
        && !name.chars().any(|c| c == '/' || c == '=' || c == '\\' || c.is_whitespace())
}

impl FileTree {
    pub fn is_dir(&self, path: &str) -> bool {
        path == "/" || matches!(self.nodes.get(path), Some(Node::Dir))
    }

    pub fn is_file(&self, path: &str) -> bool {
        matches!(self.nodes.get(path), Some(Node::File { .. }))
    }

    pub fn exists(&self, path: &str) -> bool {
        path == "/" || self.nodes.contains_key(path)
    }

    /// Entries directly under `dir`, sorted by name: `(name, is_dir)`.
    pub fn list(&self, dir: &str) -> Vec<(String, bool)> {
        let prefix = if dir == "/" { "/".to_string() } else { format!("{dir}/") };
        self.nodes
            .range(prefix.clone()..)
            .take_while(|(p, _)| p.starts_with(&prefix))
            .filter(|(p, _)| !p[prefix.len()..].contains('/'))
            .map(|(p, n)| (p[prefix.len()..].to_string(), matches!(n, Node::Dir)))
            .collect()
    }

    pub fn create_file(&mut self, path: &str, text: &str) -> Result<(), String> {
        if !valid_path(path) {
            return Err(format!("invalid path `{path}`"));
        }
        if !self.is_dir(parent_of(path)) {
            return Err(format!("parent of `{path}` is not a directory"));
        }
        if self.is_dir(path) {
            return Err(format!("`{path}` is a directory"));
        }
        self.nodes.insert(path.to_string(), Node::File { text: text.to_string() });
        Ok(())
    }

    pub fn mkdir(&mut self, path: &str) -> Result<(), String> {
        if !valid_path(path) {
            return Err(format!("invalid path `{path}`"));
        }
        if !self.is_dir(parent_of(path)) {
            return Err(format!("parent of `{path}` is not a directory"));
        }
        if self.exists(path) {
            return Err(format!("`{path}` already exists"));
        }
        self.nodes.insert(path.to_string(), Node::Dir);
        Ok(())
    }

    /// Removes `path` and everything beneath it.
    pub fn remove(&mut self, path: &str) -> Result<(), String> {
        if path == "/" || !self.nodes.contains_key(path) {
            return Err(format!("`{path}` does not exist"));
        }
        let prefix = format!("{path}/");
        self.nodes.retain(|p, _| p != path && !p.starts_with(&prefix));
        if self.selected.as_deref().is_some_and(|s| s == path || s.starts_with(&prefix)) {
            self.selected = None;
        }
        if self.cwd == path || self.cwd.starts_with(&prefix) {
            self.cwd = parent_of(path).to_string();
        }
        Ok(())
    }

    /// Moves a node (and its subtree). `dst` must not exist and its parent must be a directory.
    pub fn rename(&mut self, src: &str, dst: &str) -> Result<(), String> {
        if !self.nodes.contains_key(src) {
            return Err(format!("`{src}` does not exist"));
        }
        if !valid_path(dst) {
            return Err(format!("invalid path `{dst}`"));
        }
        if self.exists(dst) {
            return Err(format!("`{dst}` already exists"));
        }
        if !self.is_dir(parent_of(dst)) {
            return Err(format!("parent of `{dst}` is not a directory"));
        }
        let src_prefix = format!("{src}/");
        if dst.starts_with(&src_prefix) {
            return Err(format!("cannot move `{src}` into itself"));
        }
        let moved: Vec<(String, Node)> = self
            .nodes
            .iter()
            .filter(|(p, _)| *p == src || p.starts_with(&src_prefix))
            .map(|(p, n)| (format!("{dst}{}", &p[src.len()..]), n.clone()))
            .collect();
        self.nodes.retain(|p, _| p != src && !p.starts_with(&src_prefix));
        self.nodes.extend(moved);
        if self.selected.as_deref() == Some(src) {
            self.selected = Some(dst.to_string());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Editor {
    pub lines: Vec<String>,
    /// (line, column), zero-based, column in chars.
    pub cursor: (usize, usize),
    /// Whether the rest of the current line is selected (replaced by the next TYPE).
    pub select_to_end: bool,
    pub saved: bool,
}

impl Default for Editor {
    fn default() -> Self {
        Self { lines: vec![String::new()], cursor: (0, 0), select_to_end: false, saved: true }
    }
}

impl Editor {
    pub fn line_len(&self, line: usize) -> usize {
        self.lines.get(line).map_or(0, |l| l.chars().count())
    }

    fn byte_at(&self, line: usize, col: usize) -> usize {
        let l = &self.lines[line];
        l.char_indices().nth(col).map_or(l.len(), |(i, _)| i)
    }

    pub fn insert(&mut self, text: &str) {
        let (line, col) = self.cursor;
        let at = self.byte_at(line, col);
        if self.select_to_end {
            self.lines[line].truncate(at);
            self.select_to_end = false;
        }
        self.lines[line].insert_str(at, text);
        self.cursor.1 = col + text.chars().count();
        self.saved = false;
    }

    pub fn newline(&mut self) {
        let (line, col) = self.cursor;
        let at = self.byte_at(line, col);
        let rest = self.lines[line].split_off(at);
        self.lines.insert(line + 1, rest);
        self.cursor = (line + 1, 0);
        self.select_to_end = false;
        self.saved = false;
    }

    /// Deletes the selection or the char before the cursor. Returns false when nothing changed.
    pub fn backspace(&mut self) -> bool {
        let (line, col) = self.cursor;
        if self.select_to_end {
            let at = self.byte_at(line, col);
            self.lines[line].truncate(at);
            self.select_to_end = false;
            self.saved = false;
            return true;
        }
        if col > 0 {
            let start = self.byte_at(line, col - 1);
            let end = self.byte_at(line, col);
            self.lines[line].replace_range(start..end, "");
            self.cursor.1 = col - 1;
        } else if line > 0 {
            let cur = self.lines.remove(line);
            let prev_len = self.line_len(line - 1);
            self.lines[line - 1].push_str(&cur);
            self.cursor = (line - 1, prev_len);
        } else {
            return false;
        }
        self.saved = false;
        true
    }

    /// Appends a line, reusing a single empty buffer line.
    pub fn append_line(&mut self, text: &str) {
        if self.lines.len() == 1 && self.lines[0].is_empty() {
            self.lines[0] = text.to_string();
        } else {
            self.lines.push(text.to_string());
        }
        self.saved = false;
    }

    pub fn clamp_cursor(&mut self) {
        let line = self.cursor.0.min(self.lines.len().saturating_sub(1));
        self.cursor = (line, self.cursor.1.min(self.line_len(line)));
    }
}

/// Widget holding keyboard focus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "widget", content = "at", rename_all = "lowercase")]
pub enum Focus {
    Taskbar,
    Cell(CellRef),
    Grid,
    List,
    Prompt,
    Text,
}

impl Focus {
    /// Stable widget id used in observations.
    pub fn widget_id(self) -> String {
        match self {
            Focus::Taskbar => "taskbar".into(),
            Focus::Cell(c) => format!("sheet:{c}"),
            Focus::Grid => "sheet:grid".into(),
            Focus::List => "files:list".into(),
            Focus::Prompt => "files:prompt".into(),
            Focus::Text => "editor:text".into(),
        }
    }

    pub fn from_widget_id(s: &str) -> Result<Self, String> {
        Ok(match s {
            "taskbar" => Focus::Taskbar,
            "sheet:grid" => Focus::Grid,
            "files:list" => Focus::List,
            "files:prompt" => Focus::Prompt,
            "editor:text" => Focus::Text,
            other => match other.strip_prefix("sheet:") {
                Some(cell) => Focus::Cell(cell.parse()?),
                None => return Err(format!("unknown widget `{other}`")),
            },
        })
    }

    /// Default focus when an app is brought to the front.
    pub fn default_for(app: App) -> Self {
        match app {
            App::Sheet => Focus::Grid,
            App::Files => Focus::List,
            App::Editor => Focus::Text,
        }
    }
}

/// Full desktop state. Serializes losslessly with serde and through the text observation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvState {
    pub active: App,
    pub focus: Focus,
    pub sheet: Sheet,
    pub files: FileTree,
    pub editor: Editor,
    pub step_count: u32,
    pub max_steps: u32,
    pub done: bool,
    /// API names the agent may call (empty in GUI-only mode).
    pub apis: Vec<String>,
}

impl EnvState {
    pub fn new(active: App, max_steps: u32, apis: Vec<String>) -> Self {
        Self {
            active,
            focus: Focus::default_for(active),
            sheet: Sheet::default(),
            files: FileTree::default(),
            editor: Editor::default(),
            step_count: 0,
            max_steps,
            done: false,
            apis,
        }
    }
}
