//! The atomic-action tool-call language.
//!
//! Every role in the pipeline exchanges actions as PyAutoGUI-style call
//! expressions such as `pyautogui.click(x=268, y=439)` or
//! `mobile.swipe(begin=[100,200], end=[100,50])`. This module parses them into
//! a typed [`AtomicAction`], renders them back canonically, validates them
//! against a platform [`ActionSpace`], and produces the one-line English
//! summaries used when rebuilding interaction history.
//!
//! Parsing is liberal: keyword or positional arguments in any order, either
//! quote style, arbitrary whitespace, float coordinates (truncated toward
//! zero). Rendering is canonical, so `parse_action(&a.to_string()) == a`.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A pixel coordinate in the frame of the screenshot the action targets.
pub type Coord = u32;

/// Direction argument of `pyautogui.scroll`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScrollDirection {
    Up,
    Down,
    Left,
    Right,
}

impl ScrollDirection {
    pub const ALL: [ScrollDirection; 4] = [Self::Up, Self::Down, Self::Left, Self::Right];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Up => "up",
            Self::Down => "down",
            Self::Left => "left",
            Self::Right => "right",
        }
    }

    fn from_str(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.as_str().eq_ignore_ascii_case(s.trim()))
    }
}

/// Status argument of `pyautogui.terminate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerminateStatus {
    #[default]
    Success,
    Failure,
}

impl TerminateStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Success => "success",
            Self::Failure => "failure",
        }
    }
}

/// One executable tool call.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AtomicAction {
    Click { x: Coord, y: Coord },
    DoubleClick { x: Coord, y: Coord },
    RightClick { x: Coord, y: Coord },
    MoveTo { x: Coord, y: Coord },
    DragTo { x: Coord, y: Coord },
    Press { keys: Vec<String> },
    Hotkey { keys: Vec<String> },
    Write { message: String },
    Scroll { direction: ScrollDirection },
    Wait,
    Terminate { status: TerminateStatus },
    LongPress { x: Coord, y: Coord },
    Swipe { begin: (Coord, Coord), end: (Coord, Coord) },
    OpenApp { name: String },
    Answer { message: String },
    Home,
    Back,
}

/// The variant of an [`AtomicAction`] without its arguments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Click,
    DoubleClick,
    RightClick,
    MoveTo,
    DragTo,
    Press,
    Hotkey,
    Write,
    Scroll,
    Wait,
    Terminate,
    LongPress,
    Swipe,
    OpenApp,
    Answer,
    Home,
    Back,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Namespace {
    Pyautogui,
    Mobile,
}

impl Namespace {
    fn as_str(self) -> &'static str {
        match self {
            Namespace::Pyautogui => "pyautogui",
            Namespace::Mobile => "mobile",
        }
    }
}

impl ActionKind {
    pub const ALL: [ActionKind; 17] = [
        Self::Click,
        Self::DoubleClick,
        Self::RightClick,
        Self::MoveTo,
        Self::DragTo,
        Self::Press,
        Self::Hotkey,
        Self::Write,
        Self::Scroll,
        Self::Wait,
        Self::Terminate,
        Self::LongPress,
        Self::Swipe,
        Self::OpenApp,
        Self::Answer,
        Self::Home,
        Self::Back,
    ];

    fn namespace(self) -> Namespace {
        match self {
            Self::LongPress | Self::Swipe | Self::OpenApp | Self::Home | Self::Back => Namespace::Mobile,
            _ => Namespace::Pyautogui,
        }
    }

    /// Function name as it appears after the namespace.
    pub fn function_name(self) -> &'static str {
        match self {
            Self::Click => "click",
            Self::DoubleClick => "doubleClick",
            Self::RightClick => "rightClick",
            Self::MoveTo => "moveTo",
            Self::DragTo => "dragTo",
            Self::Press => "press",
            Self::Hotkey => "hotkey",
            Self::Write => "write",
            Self::Scroll => "scroll",
            Self::Wait => "wait",
            Self::Terminate => "terminate",
            Self::LongPress => "long_press",
            Self::Swipe => "swipe",
            Self::OpenApp => "open_app",
            Self::Answer => "answer",
            Self::Home => "home",
            Self::Back => "back",
        }
    }

    /// Fully qualified tool name, e.g. `mobile.swipe`.
    pub fn tool_name(self) -> String {
        format!("{}.{}", self.namespace().as_str(), self.function_name())
    }

    fn lookup(namespace: &str, function: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.namespace().as_str() == namespace && k.function_name() == function)
    }

    /// Tools whose value is a screen position and is scored geometrically.
    pub fn is_coordinate(self) -> bool {
        matches!(
            self,
            Self::Click
                | Self::DoubleClick
                | Self::RightClick
                | Self::MoveTo
                | Self::DragTo
                | Self::LongPress
                | Self::Swipe
        )
    }

    /// Parameter names in positional order.
    fn params(self) -> &'static [&'static str] {
        match self {
            Self::Click | Self::DoubleClick | Self::RightClick | Self::MoveTo | Self::DragTo | Self::LongPress => {
                &["x", "y"]
            }
            Self::Press | Self::Hotkey => &["keys"],
            Self::Write | Self::Answer => &["message"],
            Self::Scroll => &["direction"],
            Self::Terminate => &["status"],
            Self::Swipe => &["begin", "end"],
            Self::OpenApp => &["name"],
            Self::Wait | Self::Home | Self::Back => &[],
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.function_name())
    }
}

impl AtomicAction {
    pub fn kind(&self) -> ActionKind {
        match self {
            Self::Click { .. } => ActionKind::Click,
            Self::DoubleClick { .. } => ActionKind::DoubleClick,
            Self::RightClick { .. } => ActionKind::RightClick,
            Self::MoveTo { .. } => ActionKind::MoveTo,
            Self::DragTo { .. } => ActionKind::DragTo,
            Self::Press { .. } => ActionKind::Press,
            Self::Hotkey { .. } => ActionKind::Hotkey,
            Self::Write { .. } => ActionKind::Write,
            Self::Scroll { .. } => ActionKind::Scroll,
            Self::Wait => ActionKind::Wait,
            Self::Terminate { .. } => ActionKind::Terminate,
            Self::LongPress { .. } => ActionKind::LongPress,
            Self::Swipe { .. } => ActionKind::Swipe,
            Self::OpenApp { .. } => ActionKind::OpenApp,
            Self::Answer { .. } => ActionKind::Answer,
            Self::Home => ActionKind::Home,
            Self::Back => ActionKind::Back,
        }
    }

    /// Every screen position the action touches, in argument order.
    pub fn points(&self) -> Vec<(Coord, Coord)> {
        match *self {
            Self::Click { x, y }
            | Self::DoubleClick { x, y }
            | Self::RightClick { x, y }
            | Self::MoveTo { x, y }
            | Self::DragTo { x, y }
            | Self::LongPress { x, y } => vec![(x, y)],
            Self::Swipe { begin, end } => vec![begin, end],
            _ => Vec::new(),
        }
    }

    /// Terminate and Answer end an episode.
    pub fn is_terminal(&self) -> bool {
        matches!(self, Self::Terminate { .. } | Self::Answer { .. })
    }

    /// Checks the structural invariants that the type cannot express.
    pub fn check_invariants(&self) -> Result<(), ParseError> {
        match self {
            Self::Press { keys } if keys.is_empty() => {
                Err(ParseError::BadArgument("press requires at least one key".into()))
            }
            Self::Hotkey { keys } if keys.len() < 2 => {
                Err(ParseError::BadArgument("hotkey requires at least two keys".into()))
            }
            _ => Ok(()),
        }
    }

    /// One deterministic English clause describing the action.
    pub fn summarize(&self) -> String {
        match self {
            Self::Click { x, y } => format!("clicked at ({x}, {y})"),
            Self::DoubleClick { x, y } => format!("double-clicked at ({x}, {y})"),
            Self::RightClick { x, y } => format!("right-clicked at ({x}, {y})"),
            Self::MoveTo { x, y } => format!("moved the cursor to ({x}, {y})"),
            Self::DragTo { x, y } => format!("dragged the cursor to ({x}, {y})"),
            Self::Press { keys } => format!("pressed the key {}", keys.join(", ")),
            Self::Hotkey { keys } => format!("pressed the hotkey {}", keys.join("+")),
            Self::Write { message } => format!("typed the text '{message}'"),
            Self::Scroll { direction } => format!("scrolled {}", direction.as_str()),
            Self::Wait => "waited for the screen to load".to_string(),
            Self::Terminate { status } => {
                format!("terminated the task with status {}", status.as_str())
            }
            Self::LongPress { x, y } => format!("long-pressed at ({x}, {y})"),
            Self::Swipe { begin, end } => format!("swiped from ({}, {}) to ({}, {})", begin.0, begin.1, end.0, end.1),
            Self::OpenApp { name } => format!("opened the app '{name}'"),
            Self::Answer { message } => format!("answered '{message}'"),
            Self::Home => "went to the home screen".to_string(),
            Self::Back => "pressed the back button".to_string(),
        }
    }
}

/// Free-function form of [`AtomicAction::summarize`].
pub fn summarize_action(a: &AtomicAction) -> String {
    a.summarize()
}

/// Canonical text form; `parse_action` inverts it exactly.
pub fn render_action(a: &AtomicAction) -> String {
    a.to_string()
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\'' => out.push_str("\\'"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('\'');
    out
}

fn key_list(keys: &[String]) -> String {
    let quoted: Vec<String> = keys.iter().map(|k| quote(k)).collect();
    format!("[{}]", quoted.join(","))
}

impl fmt::Display for AtomicAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = self.kind().tool_name();
        match self {
            Self::Click { x, y }
            | Self::DoubleClick { x, y }
            | Self::RightClick { x, y }
            | Self::MoveTo { x, y }
            | Self::DragTo { x, y }
            | Self::LongPress { x, y } => write!(f, "{name}(x={x}, y={y})"),
            Self::Press { keys } | Self::Hotkey { keys } => {
                write!(f, "{name}(keys={})", key_list(keys))
            }
            Self::Write { message } | Self::Answer { message } => {
                write!(f, "{name}(message={})", quote(message))
            }
            Self::Scroll { direction } => {
                write!(f, "{name}(direction={})", quote(direction.as_str()))
            }
            Self::Terminate { status } => write!(f, "{name}(status={})", quote(status.as_str())),
            Self::Swipe { begin, end } => {
                write!(f, "{name}(begin=[{},{}], end=[{},{}])", begin.0, begin.1, end.0, end.1)
            }
            Self::OpenApp { name: app } => write!(f, "{name}(name={})", quote(app)),
            Self::Wait | Self::Home | Self::Back => write!(f, "{name}()"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("malformed syntax: {0}")]
    MalformedSyntax(String),
    #[error("bad argument: {0}")]
    BadArgument(String),
}

// ---------------------------------------------------------------------------
// Lexer and argument parser
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Number(f64),
    Str(String),
    Ident(String),
    List(Vec<Value>),
}

impl Value {
    fn describe(&self) -> &'static str {
        match self {
            Value::Number(_) => "number",
            Value::Str(_) => "string",
            Value::Ident(_) => "identifier",
            Value::List(_) => "list",
        }
    }
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(src: &'a str) -> Self {
        Self { src, pos: 0 }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.bump();
        }
    }

    fn eat(&mut self, want: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(want) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, want: char) -> Result<(), ParseError> {
        if self.eat(want) {
            Ok(())
        } else {
            Err(ParseError::MalformedSyntax(format!(
                "expected `{want}` at byte {}",
                self.pos
            )))
        }
    }

    fn ident(&mut self) -> Option<&'a str> {
        self.skip_ws();
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == '_') {
            self.bump();
        }
        (self.pos > start).then(|| &self.src[start..self.pos])
    }

    fn string(&mut self, delim: char) -> Result<String, ParseError> {
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return Err(ParseError::MalformedSyntax("unterminated string literal".into())),
                Some('\\') => match self.bump() {
                    Some('n') => out.push('\n'),
                    Some('r') => out.push('\r'),
                    Some('t') => out.push('\t'),
                    Some(c) => out.push(c),
                    None => return Err(ParseError::MalformedSyntax("unterminated string literal".into())),
                },
                Some(c) if c == delim => return Ok(out),
                Some(c) => out.push(c),
            }
        }
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        let start = self.pos;
        if matches!(self.peek(), Some('-' | '+')) {
            self.bump();
        }
        while matches!(self.peek(), Some(c) if c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E') {
            self.bump();
        }
        let text = &self.src[start..self.pos];
        text.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| ParseError::BadArgument(format!("invalid number `{text}`")))
    }

    fn value(&mut self, depth: usize) -> Result<Value, ParseError> {
        if depth > 8 {
            return Err(ParseError::MalformedSyntax("nesting too deep".into()));
        }
        self.skip_ws();
        match self.peek() {
            Some(q @ ('\'' | '"')) => {
                self.bump();
                Ok(Value::Str(self.string(q)?))
            }
            Some('[') | Some('(') => {
                let close = if self.bump() == Some('[') { ']' } else { ')' };
                let mut items = Vec::new();
                if self.eat(close) {
                    return Ok(Value::List(items));
                }
                loop {
                    items.push(self.value(depth + 1)?);
                    if self.eat(',') {
                        // tolerate a trailing comma
                        if self.eat(close) {
                            return Ok(Value::List(items));
                        }
                        continue;
                    }
                    self.expect(close)?;
                    return Ok(Value::List(items));
                }
            }
            Some(c) if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => Ok(Value::Number(self.number()?)),
            Some(c) if c.is_ascii_alphabetic() || c == '_' => {
                Ok(Value::Ident(self.ident().unwrap_or_default().to_string()))
            }
            Some(c) => Err(ParseError::MalformedSyntax(format!(
                "unexpected character `{c}` at byte {}",
                self.pos
            ))),
            None => Err(ParseError::MalformedSyntax("unexpected end of input".into())),
        }
    }
}

struct Args {
    positional: Vec<Value>,
    named: Vec<(String, Value)>,
}

fn parse_args(cur: &mut Cursor<'_>) -> Result<Args, ParseError> {
    let mut args = Args {
        positional: Vec::new(),
        named: Vec::new(),
    };
    if cur.eat(')') {
        return Ok(args);
    }
    loop {
        cur.skip_ws();
        let save = cur.pos;
        let mut named = None;
        if let Some(id) = cur.ident() {
            if cur.eat('=') {
                named = Some(id.to_string());
            } else {
                cur.pos = save;
            }
        }
        let value = cur.value(0)?;
        match named {
            Some(name) => {
                if args.named.iter().any(|(n, _)| *n == name) {
                    return Err(ParseError::BadArgument(format!("duplicate argument `{name}`")));
                }
                args.named.push((name, value));
            }
            None if !args.named.is_empty() => {
                return Err(ParseError::BadArgument(
                    "positional argument after keyword argument".into(),
                ))
            }
            None => args.positional.push(value),
        }
        if cur.eat(',') {
            if cur.eat(')') {
                return Ok(args);
            }
            continue;
        }
        cur.expect(')')?;
        return Ok(args);
    }
}

fn to_coord(v: &Value, what: &str) -> Result<Coord, ParseError> {
    let n = match v {
        Value::Number(n) => *n,
        Value::Str(s) => s
            .trim()
            .parse::<f64>()
            .map_err(|_| ParseError::BadArgument(format!("{what}: `{s}` is not a number")))?,
        other => {
            return Err(ParseError::BadArgument(format!(
                "{what}: expected number, got {}",
                other.describe()
            )))
        }
    };
    let t = n.trunc();
    if !(0.0..=Coord::MAX as f64).contains(&t) {
        return Err(ParseError::BadArgument(format!("{what}: coordinate {n} out of range")));
    }
    Ok(t as Coord)
}

fn to_text(v: &Value, what: &str) -> Result<String, ParseError> {
    match v {
        Value::Str(s) => Ok(s.clone()),
        other => Err(ParseError::BadArgument(format!(
            "{what}: expected string, got {}",
            other.describe()
        ))),
    }
}

fn to_pair(v: &Value, what: &str) -> Result<(Coord, Coord), ParseError> {
    match v {
        Value::List(items) if items.len() == 2 => Ok((to_coord(&items[0], what)?, to_coord(&items[1], what)?)),
        _ => Err(ParseError::BadArgument(format!("{what}: expected [x, y] pair"))),
    }
}

fn to_keys(values: &[Value], what: &str) -> Result<Vec<String>, ParseError> {
    let mut keys = Vec::new();
    for v in values {
        match v {
            Value::List(items) => keys.extend(to_keys(items, what)?),
            other => keys.push(to_text(other, what)?),
        }
    }
    Ok(keys)
}

/// Binds positional and keyword arguments to the tool's parameter list.
fn bind(kind: ActionKind, args: Args) -> Result<Vec<Option<Value>>, ParseError> {
    let params = kind.params();
    // Press/hotkey accept pyautogui's variadic form: hotkey('ctrl', 'c').
    let variadic_keys = matches!(kind, ActionKind::Press | ActionKind::Hotkey);
    let mut slots: Vec<Option<Value>> = vec![None; params.len()];
    if variadic_keys && args.positional.len() > 1 {
        slots[0] = Some(Value::List(args.positional));
    } else {
        if args.positional.len() > params.len() {
            return Err(ParseError::BadArgument(format!(
                "{} takes {} argument(s), got {}",
                kind.tool_name(),
                params.len(),
                args.positional.len()
            )));
        }
        for (slot, v) in slots.iter_mut().zip(args.positional) {
            *slot = Some(v);
        }
    }
    for (name, v) in args.named {
        let idx = params
            .iter()
            .position(|p| *p == name)
            .ok_or_else(|| ParseError::BadArgument(format!("unexpected argument `{name}`")))?;
        if slots[idx].is_some() {
            return Err(ParseError::BadArgument(format!("argument `{name}` given twice")));
        }
        slots[idx] = Some(v);
    }
    Ok(slots)
}

fn required(slot: &Option<Value>, name: &str) -> Result<Value, ParseError> {
    slot.clone()
        .ok_or_else(|| ParseError::BadArgument(format!("missing argument `{name}`")))
}

fn build(kind: ActionKind, slots: Vec<Option<Value>>) -> Result<AtomicAction, ParseError> {
    use ActionKind as K;
    let xy = |slots: &[Option<Value>]| -> Result<(Coord, Coord), ParseError> {
        Ok((
            to_coord(&required(&slots[0], "x")?, "x")?,
            to_coord(&required(&slots[1], "y")?, "y")?,
        ))
    };
    let action = match kind {
        K::Click => {
            let (x, y) = xy(&slots)?;
            AtomicAction::Click { x, y }
        }
        K::DoubleClick => {
            let (x, y) = xy(&slots)?;
            AtomicAction::DoubleClick { x, y }
        }
        K::RightClick => {
            let (x, y) = xy(&slots)?;
            AtomicAction::RightClick { x, y }
        }
        K::MoveTo => {
            let (x, y) = xy(&slots)?;
            AtomicAction::MoveTo { x, y }
        }
        K::DragTo => {
            let (x, y) = xy(&slots)?;
            AtomicAction::DragTo { x, y }
        }
        K::LongPress => {
            let (x, y) = xy(&slots)?;
            AtomicAction::LongPress { x, y }
        }
        K::Press | K::Hotkey => {
            let keys = to_keys(&[required(&slots[0], "keys")?], "keys")?;
            if kind == K::Press {
                AtomicAction::Press { keys }
            } else {
                AtomicAction::Hotkey { keys }
            }
        }
        K::Write => AtomicAction::Write {
            message: to_text(&required(&slots[0], "message")?, "message")?,
        },
        K::Answer => AtomicAction::Answer {
            message: to_text(&required(&slots[0], "message")?, "message")?,
        },
        K::OpenApp => AtomicAction::OpenApp {
            name: to_text(&required(&slots[0], "name")?, "name")?,
        },
        K::Scroll => {
            let raw = match required(&slots[0], "direction")? {
                Value::Str(s) | Value::Ident(s) => s,
                other => {
                    return Err(ParseError::BadArgument(format!(
                        "direction: expected up/down/left/right, got {}",
                        other.describe()
                    )))
                }
            };
            let direction = ScrollDirection::from_str(&raw)
                .ok_or_else(|| ParseError::BadArgument(format!("direction: `{raw}` is not up/down/left/right")))?;
            AtomicAction::Scroll { direction }
        }
        K::Terminate => {
            let status = match &slots[0] {
                None => TerminateStatus::Success,
                Some(Value::Str(s)) | Some(Value::Ident(s)) => match s.trim().to_ascii_lowercase().as_str() {
                    "success" => TerminateStatus::Success,
                    "failure" | "fail" | "failed" => TerminateStatus::Failure,
                    _ => return Err(ParseError::BadArgument(format!("status: `{s}` is not success/failure"))),
                },
                Some(other) => {
                    return Err(ParseError::BadArgument(format!(
                        "status: expected string, got {}",
                        other.describe()
                    )))
                }
            };
            AtomicAction::Terminate { status }
        }
        K::Swipe => AtomicAction::Swipe {
            begin: to_pair(&required(&slots[0], "begin")?, "begin")?,
            end: to_pair(&required(&slots[1], "end")?, "end")?,
        },
        K::Wait => AtomicAction::Wait,
        K::Home => AtomicAction::Home,
        K::Back => AtomicAction::Back,
    };
    action.check_invariants()?;
    Ok(action)
}

/// Parses a single `namespace.function(args...)` call.
pub fn parse_action(text: &str) -> Result<AtomicAction, ParseError> {
    let mut cur = Cursor::new(text);
    let namespace = cur
        .ident()
        .ok_or_else(|| ParseError::MalformedSyntax("expected a tool name".into()))?;
    cur.expect('.')?;
    let function = cur
        .ident()
        .ok_or_else(|| ParseError::MalformedSyntax("expected a function name".into()))?;
    let kind = ActionKind::lookup(namespace, function)
        .ok_or_else(|| ParseError::UnknownTool(format!("{namespace}.{function}")))?;
    cur.expect('(')?;
    let args = parse_args(&mut cur)?;
    cur.skip_ws();
    if !cur.rest().is_empty() {
        return Err(ParseError::MalformedSyntax(format!(
            "trailing input after call: `{}`",
            cur.rest().chars().take(32).collect::<String>()
        )));
    }
    build(kind, bind(kind, args)?)
}

/// Splits a `<tool_call>` block into individual call strings.
///
/// Calls are separated by newlines (or `;`) that sit outside string literals
/// and brackets. Blank segments are dropped.
pub fn split_tool_calls(block: &str) -> Vec<String> {
    let mut calls = Vec::new();
    let mut current = String::new();
    let mut quote: Option<char> = None;
    let mut escaped = false;
    let mut depth = 0i32;
    for c in block.chars() {
        if let Some(q) = quote {
            current.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == q {
                quote = None;
            }
            continue;
        }
        match c {
            '\'' | '"' => {
                quote = Some(c);
                current.push(c);
            }
            '(' | '[' => {
                depth += 1;
                current.push(c);
            }
            ')' | ']' => {
                depth -= 1;
                current.push(c);
            }
            '\n' | ';' if depth <= 0 => {
                let call = current.trim();
                if !call.is_empty() {
                    calls.push(call.to_string());
                }
                current.clear();
            }
            c => current.push(c),
        }
    }
    let call = current.trim();
    if !call.is_empty() {
        calls.push(call.to_string());
    }
    calls
}

// ---------------------------------------------------------------------------
// Action spaces
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    Desktop,
    Mobile,
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Platform::Desktop => "desktop",
            Platform::Mobile => "mobile",
        })
    }
}

const DESKTOP_KINDS: [ActionKind; 11] = [
    ActionKind::Click,
    ActionKind::DoubleClick,
    ActionKind::RightClick,
    ActionKind::MoveTo,
    ActionKind::DragTo,
    ActionKind::Press,
    ActionKind::Hotkey,
    ActionKind::Write,
    ActionKind::Scroll,
    ActionKind::Wait,
    ActionKind::Terminate,
];

const MOBILE_KINDS: [ActionKind; 11] = [
    ActionKind::Click,
    ActionKind::LongPress,
    ActionKind::Press,
    ActionKind::Swipe,
    ActionKind::Wait,
    ActionKind::Terminate,
    ActionKind::Write,
    ActionKind::OpenApp,
    ActionKind::Answer,
    ActionKind::Home,
    ActionKind::Back,
];

/// The only key the mobile space can press.
pub const MOBILE_PRESS_KEY: &str = "enter";

/// The set of tools available on one platform.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpace {
    pub platform: Platform,
    pub allowed: BTreeSet<ActionKind>,
}

impl ActionSpace {
    pub fn for_platform(platform: Platform) -> Self {
        let kinds: &[ActionKind] = match platform {
            Platform::Desktop => &DESKTOP_KINDS,
            Platform::Mobile => &MOBILE_KINDS,
        };
        Self {
            platform,
            allowed: kinds.iter().copied().collect(),
        }
    }

    pub fn desktop() -> Self {
        Self::for_platform(Platform::Desktop)
    }

    pub fn mobile() -> Self {
        Self::for_platform(Platform::Mobile)
    }

    pub fn contains(&self, kind: ActionKind) -> bool {
        self.allowed.contains(&kind)
    }

    /// All 22 (platform, tool) rows of the two action tables, in table order.
    pub fn table_rows() -> Vec<(Platform, ActionKind)> {
        DESKTOP_KINDS
            .iter()
            .map(|k| (Platform::Desktop, *k))
            .chain(MOBILE_KINDS.iter().map(|k| (Platform::Mobile, *k)))
            .collect()
    }

    /// Tool listing substituted into `{ACTION_SPACE}` prompt slots.
    pub fn describe(&self) -> String {
        let kinds: &[ActionKind] = match self.platform {
            Platform::Desktop => &DESKTOP_KINDS,
            Platform::Mobile => &MOBILE_KINDS,
        };
        kinds
            .iter()
            .map(|k| format!("{}: {}", tool_signature(*k, self.platform), tool_help(*k)))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Parses a call and additionally enforces platform-specific argument rules.
    pub fn parse(&self, text: &str) -> Result<AtomicAction, ParseError> {
        let action = parse_action(text)?;
        if let Some(v) = self.argument_violation(&action) {
            return Err(ParseError::BadArgument(v.to_string()));
        }
        Ok(action)
    }

    fn argument_violation(&self, a: &AtomicAction) -> Option<Violation> {
        match (self.platform, a) {
            (Platform::Mobile, AtomicAction::Press { keys })
                if keys.len() != 1 || !keys[0].eq_ignore_ascii_case(MOBILE_PRESS_KEY) =>
            {
                Some(Violation::KeyNotAllowed {
                    keys: keys.clone(),
                    platform: Platform::Mobile,
                })
            }
            _ => None,
        }
    }
}

fn tool_signature(kind: ActionKind, platform: Platform) -> String {
    let name = kind.tool_name();
    match kind {
        ActionKind::Press if platform == Platform::Mobile => format!("{name}(keys=['enter'])"),
        ActionKind::Press => format!("{name}(keys=['key'])"),
        ActionKind::Hotkey => format!("{name}(keys=['key1','key2',...])"),
        ActionKind::Write | ActionKind::Answer => format!("{name}(message='text')"),
        ActionKind::Scroll => format!("{name}(direction)"),
        ActionKind::Terminate => format!("{name}(status='success')"),
        ActionKind::Swipe => format!("{name}(begin=[x1,y1], end=[x2,y2])"),
        ActionKind::OpenApp => format!("{name}(name='APP name')"),
        ActionKind::Wait | ActionKind::Home | ActionKind::Back => format!("{name}()"),
        _ => format!("{name}(x=x1, y=y1)"),
    }
}

fn tool_help(kind: ActionKind) -> &'static str {
    match kind {
        ActionKind::Click => "click or tap at (x1, y1)",
        ActionKind::DoubleClick => "double-click at (x1, y1)",
        ActionKind::RightClick => "right-click at (x1, y1)",
        ActionKind::MoveTo => "move the pointer to (x1, y1)",
        ActionKind::DragTo => "drag the pointer to (x1, y1)",
        ActionKind::Press => "press a key",
        ActionKind::Hotkey => "press a key combination",
        ActionKind::Write => "type text",
        ActionKind::Scroll => "scroll up, down, left or right",
        ActionKind::Wait => "wait for the screen to settle",
        ActionKind::Terminate => "end the episode once the goal is met",
        ActionKind::LongPress => "long-press at (x1, y1)",
        ActionKind::Swipe => "swipe from (x1, y1) to (x2, y2)",
        ActionKind::OpenApp => "launch an app by name",
        ActionKind::Answer => "reply to the user with text",
        ActionKind::Home => "go to the home screen",
        ActionKind::Back => "press the back button",
    }
}

/// A reason an action cannot run in a given space on a given screen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    NotInSpace { kind: ActionKind, platform: Platform },
    OutOfBounds { axis: char, value: Coord, limit: u32 },
    KeyNotAllowed { keys: Vec<String>, platform: Platform },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NotInSpace { kind, platform } => {
                write!(f, "{} is not in the {platform} action space", kind.tool_name())
            }
            Violation::OutOfBounds { axis, value, limit } => {
                write!(f, "{axis}={value} is out of bounds (limit {limit})")
            }
            Violation::KeyNotAllowed { keys, platform } => {
                write!(f, "keys {keys:?} cannot be pressed on {platform}")
            }
        }
    }
}

/// Reports every way `a` fails to fit `space` on a `width`×`height` screen.
/// An empty list means the action is valid.
pub fn validate_action(a: &AtomicAction, space: &ActionSpace, screen: (u32, u32)) -> Vec<Violation> {
    let mut out = Vec::new();
    if !space.contains(a.kind()) {
        out.push(Violation::NotInSpace {
            kind: a.kind(),
            platform: space.platform,
        });
    }
    if let Some(v) = space.argument_violation(a) {
        out.push(v);
    }
    let (w, h) = screen;
    for (x, y) in a.points() {
        if x >= w {
            out.push(Violation::OutOfBounds {
                axis: 'x',
                value: x,
                limit: w,
            });
        }
        if y >= h {
            out.push(Violation::OutOfBounds {
                axis: 'y',
                value: y,
                limit: h,
            });
        }
    }
    out
}
