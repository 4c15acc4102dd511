//! Hybrid action space and its single-line text grammar.
//!
//! ```text
//! action := "CLICK(" uint "," uint ")" | "TYPE(" string ")" | "KEY(" string ")"
//!         | "SCROLL(" int ")" | "API " app "." verb "(" [arg {"," arg}] ")" | "DONE"
//! arg    := ident "=" (string | bare)
//! ```
//!
//! `docs/action_grammar.ebnf` is the machine-readable form.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Discrete GUI coordinate grid.
pub const SCREEN_COLS: u16 = 32;
pub const SCREEN_ROWS: u16 = 24;

const APP_NAMES: [&str; 3] = ["sheet", "files", "editor"];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GuiAction {
    Click { col: u16, row: u16 },
    Type(String),
    Key(String),
    Scroll(i32),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ApiCall {
    /// `app.verb`
    pub name: String,
    pub args: BTreeMap<String, String>,
}

impl ApiCall {
    pub fn new<'a>(name: &str, args: impl IntoIterator<Item = (&'a str, String)>) -> Self {
        Self {
            name: name.to_string(),
            args: args.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }

    pub fn app(&self) -> &str {
        self.name.split('.').next().unwrap_or("")
    }

    pub fn verb(&self) -> &str {
        self.name.split('.').nth(1).unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionKind {
    Gui(GuiAction),
    Api(ApiCall),
    Terminate,
}

/// An emitted action string and, when it parses, its structured form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub raw_text: String,
    pub kind: Option<ActionKind>,
}

impl Action {
    /// Parses `raw`; a grammar failure yields a malformed action rather than an error.
    pub fn from_text(raw: &str) -> Self {
        Self { raw_text: raw.to_string(), kind: parse_action(raw).ok() }
    }

    pub fn from_kind(kind: ActionKind) -> Self {
        Self { raw_text: kind.to_string(), kind: Some(kind) }
    }

    pub fn click(col: u16, row: u16) -> Self {
        Self::from_kind(ActionKind::Gui(GuiAction::Click { col, row }))
    }

    pub fn type_text(text: &str) -> Self {
        Self::from_kind(ActionKind::Gui(GuiAction::Type(text.to_string())))
    }

    pub fn key(combo: &str) -> Self {
        Self::from_kind(ActionKind::Gui(GuiAction::Key(combo.to_string())))
    }

    pub fn scroll(delta: i32) -> Self {
        Self::from_kind(ActionKind::Gui(GuiAction::Scroll(delta)))
    }

    pub fn api<'a>(name: &str, args: impl IntoIterator<Item = (&'a str, String)>) -> Self {
        Self::from_kind(ActionKind::Api(ApiCall::new(name, args)))
    }

    pub fn done() -> Self {
        Self::from_kind(ActionKind::Terminate)
    }

    pub fn well_formed(&self) -> bool {
        self.kind.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed action at byte {pos}: {reason}")]
pub struct ParseError {
    pub pos: usize,
    pub reason: String,
}

fn needs_quotes(v: &str) -> bool {
    v.is_empty() || !v.chars().all(is_bare_char)
}

fn is_bare_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '/' | ':' | '+' | '-')
}

/// Quotes `s` with `"` and backslash escapes.
pub fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionKind::Gui(GuiAction::Click { col, row }) => write!(f, "CLICK({col},{row})"),
            ActionKind::Gui(GuiAction::Type(t)) => write!(f, "TYPE({})", quote(t)),
            ActionKind::Gui(GuiAction::Key(k)) => write!(f, "KEY({})", quote(k)),
            ActionKind::Gui(GuiAction::Scroll(d)) => write!(f, "SCROLL({d})"),
            ActionKind::Api(call) => {
                write!(f, "API {}(", call.name)?;
                for (i, (k, v)) in call.args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    if needs_quotes(v) {
                        write!(f, "{k}={}", quote(v))?;
                    } else {
                        write!(f, "{k}={v}")?;
                    }
                }
                f.write_str(")")
            }
            ActionKind::Terminate => f.write_str("DONE"),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw_text)
    }
}

struct Cursor<'a> {
    s: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err<T>(&self, reason: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError { pos: self.pos, reason: reason.into() })
    }

    fn rest(&self) -> &'a str {
        &self.s[self.pos..]
    }

    fn eat(&mut self, lit: &str) -> Result<(), ParseError> {
        if self.rest().starts_with(lit) {
            self.pos += lit.len();
            Ok(())
        } else {
            self.err(format!("expected `{lit}`"))
        }
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn take_while(&mut self, pred: impl Fn(char) -> bool) -> &'a str {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if !pred(c) {
                break;
            }
            self.pos += c.len_utf8();
        }
        &self.s[start..self.pos]
    }

    fn uint(&mut self) -> Result<u16, ParseError> {
        let digits = self.take_while(|c| c.is_ascii_digit());
        if digits.is_empty() {
            return self.err("expected digits");
        }
        digits.parse().or_else(|_| self.err("integer out of range"))
    }

    fn int(&mut self) -> Result<i32, ParseError> {
        let neg = self.peek() == Some('-');
        if neg {
            self.pos += 1;
        }
        let digits = self.take_while(|c| c.is_ascii_digit());
        if digits.is_empty() {
            return self.err("expected digits");
        }
        let v: i64 = digits.parse().or_else(|_| self.err("integer out of range"))?;
        i32::try_from(if neg { -v } else { v }).or_else(|_| self.err("integer out of range"))
    }

    fn string(&mut self) -> Result<String, ParseError> {
        self.eat("\"")?;
        let mut out = String::new();
        loop {
            match self.peek() {
                None => return self.err("unterminated string"),
                Some('"') => {
                    self.pos += 1;
                    return Ok(out);
                }
                Some('\\') => {
                    self.pos += 1;
                    match self.peek() {
                        Some('"') => out.push('"'),
                        Some('\\') => out.push('\\'),
                        Some('n') => out.push('\n'),
                        _ => return self.err("bad escape"),
                    }
                    self.pos += 1;
                }
                Some(c) => {
                    out.push(c);
                    self.pos += c.len_utf8();
                }
            }
        }
    }

    fn ident(&mut self) -> Result<&'a str, ParseError> {
        let start = self.pos;
        match self.peek() {
            Some(c) if c.is_ascii_lowercase() => {}
            _ => return self.err("expected identifier"),
        }
        self.take_while(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_');
        Ok(&self.s[start..self.pos])
    }
}

/// Parses one action line. Surrounding whitespace is ignored; nothing else is lenient.
pub fn parse_action(raw: &str) -> Result<ActionKind, ParseError> {
    let mut c = Cursor { s: raw.trim(), pos: 0 };
    let kind = if c.rest().starts_with("CLICK(") {
        c.eat("CLICK(")?;
        let col = c.uint()?;
        c.eat(",")?;
        let row = c.uint()?;
        c.eat(")")?;
        if col >= SCREEN_COLS || row >= SCREEN_ROWS {
            return Err(ParseError { pos: 0, reason: format!("click ({col},{row}) off screen") });
        }
        ActionKind::Gui(GuiAction::Click { col, row })
    } else if c.rest().starts_with("TYPE(") {
        c.eat("TYPE(")?;
        let t = c.string()?;
        c.eat(")")?;
        ActionKind::Gui(GuiAction::Type(t))
    } else if c.rest().starts_with("KEY(") {
        c.eat("KEY(")?;
        let k = c.string()?;
        c.eat(")")?;
        if k.is_empty() {
            return c.err("empty key combo");
        }
        ActionKind::Gui(GuiAction::Key(k))
    } else if c.rest().starts_with("SCROLL(") {
        c.eat("SCROLL(")?;
        let d = c.int()?;
        c.eat(")")?;
        ActionKind::Gui(GuiAction::Scroll(d))
    } else if c.rest().starts_with("API ") {
        c.eat("API ")?;
        let app = c.ident()?;
        if !APP_NAMES.contains(&app) {
            return c.err(format!("unknown app `{app}`"));
        }
        c.eat(".")?;
        let verb = c.ident()?;
        let name = format!("{app}.{verb}");
        c.eat("(")?;
        let mut args = BTreeMap::new();
        if c.peek() != Some(')') {
            loop {
                let key = c.ident()?.to_string();
                c.eat("=")?;
                let value = if c.peek() == Some('"') {
                    c.string()?
                } else {
                    let bare = c.take_while(is_bare_char);
                    if bare.is_empty() {
                        return c.err("expected value");
                    }
                    bare.to_string()
                };
                if args.insert(key.clone(), value).is_some() {
                    return c.err(format!("duplicate argument `{key}`"));
                }
                if c.peek() == Some(',') {
                    c.pos += 1;
                } else {
                    break;
                }
            }
        }
        c.eat(")")?;
        ActionKind::Api(ApiCall { name, args })
    } else if c.rest().starts_with("DONE") {
        c.eat("DONE")?;
        ActionKind::Terminate
    } else {
        return c.err("unknown action");
    };
    if !c.rest().is_empty() {
        return c.err("trailing input");
    }
    Ok(kind)
}
