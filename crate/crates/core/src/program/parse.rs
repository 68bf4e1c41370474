use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::geometry::Vec3;

#[derive(Debug, Error, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}: unknown API `{name}`")]
    UnknownApi { line: usize, name: String },
    #[error("line {line}: `{name}` takes {expected} argument(s), got {found}")]
    Arity {
        line: usize,
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("line {line}, column {column}: {message}")]
    InvalidArgument {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("program contains no instructions")]
    Empty,
}

impl ParseError {
    pub fn line(&self) -> Option<usize> {
        match self {
            ParseError::Syntax { line, .. }
            | ParseError::UnknownApi { line, .. }
            | ParseError::Arity { line, .. }
            | ParseError::InvalidArgument { line, .. } => Some(*line),
            ParseError::Empty => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    MoveTo(Vec3),
    OpenGripper,
    CloseGripper,
    /// Percent of nominal speed, in (0, 100].
    ReduceSpeed(f64),
    AvoidCollision(String),
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::MoveTo(p) => write!(f, "move_to({}, {}, {})", p.x, p.y, p.z),
            Op::OpenGripper => f.write_str("open_gripper()"),
            Op::CloseGripper => f.write_str("close_gripper()"),
            Op::ReduceSpeed(p) => write!(f, "reduce_speed({p})"),
            Op::AvoidCollision(id) => write!(f, "avoid_collision({id})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instruction {
    pub op: Op,
    /// 1-based source line.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotProgram {
    pub instructions: Vec<Instruction>,
    pub source: String,
}

/// Names accepted by the parser, with their argument shapes.
pub const API: &[(&str, &str)] = &[
    (
        "move_to",
        "move_to(x, y, z): move the gripper tip to a point in meters",
    ),
    (
        "open_gripper",
        "open_gripper(): open the gripper, releasing any held object",
    ),
    (
        "close_gripper",
        "close_gripper(): close the gripper, grasping the nearest object in reach",
    ),
    (
        "reduce_speed",
        "reduce_speed(percent): scale later motions to percent of nominal speed",
    ),
    (
        "avoid_collision",
        "avoid_collision(object): route later motions over the named object",
    ),
];

#[derive(Debug, Clone, PartialEq)]
enum Arg {
    Number(f64),
    Ident(String),
}

struct Cursor<'a> {
    chars: Vec<(usize, char)>,
    pos: usize,
    line: usize,
    text: &'a str,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str, line: usize) -> Self {
        Cursor {
            chars: text.char_indices().collect(),
            pos: 0,
            line,
            text,
        }
    }

    fn column(&self) -> usize {
        self.pos + 1
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).map(|&(_, c)| c)
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek();
        self.pos += 1;
        c
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        matches!(self.peek(), None | Some('#'))
    }

    fn err(&self, message: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            line: self.line,
            column: self.column(),
            message: message.into(),
        }
    }

    fn expect(&mut self, want: char) -> Result<(), ParseError> {
        self.skip_ws();
        match self.peek() {
            Some(c) if c == want => {
                self.pos += 1;
                Ok(())
            }
            Some(c) => Err(self.err(format!("expected `{want}`, found `{c}`"))),
            None => Err(self.err(format!("expected `{want}`, found end of line"))),
        }
    }

    fn ident(&mut self) -> Option<String> {
        let start = self.pos;
        if !self
            .peek()
            .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        {
            return None;
        }
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_alphanumeric() || c == '_')
        {
            self.pos += 1;
        }
        Some(self.slice(start, self.pos))
    }

    fn slice(&self, start: usize, end: usize) -> String {
        let from = self.chars[start].0;
        let to = self.chars.get(end).map_or(self.text.len(), |&(i, _)| i);
        self.text[from..to].to_owned()
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        let start = self.pos;
        if matches!(self.peek(), Some('+' | '-')) {
            self.pos += 1;
        }
        let mut digits = 0;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
            digits += 1;
        }
        if self.peek() == Some('.') {
            self.pos += 1;
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.pos += 1;
                digits += 1;
            }
        }
        if digits == 0 {
            self.pos = start;
            return Err(self.err("expected a number"));
        }
        if matches!(self.peek(), Some('e' | 'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some('+' | '-')) {
                self.pos += 1;
            }
            if self.peek().is_some_and(|c| c.is_ascii_digit()) {
                while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                    self.pos += 1;
                }
            } else {
                self.pos = mark;
            }
        }
        let text = self.slice(start, self.pos);
        text.parse::<f64>().map_err(|_| ParseError::Syntax {
            line: self.line,
            column: start + 1,
            message: format!("invalid number `{text}`"),
        })
    }

    fn arg(&mut self) -> Result<(Arg, usize), ParseError> {
        self.skip_ws();
        let col = self.column();
        match self.peek() {
            Some(c) if c.is_ascii_digit() || matches!(c, '+' | '-' | '.') => {
                Ok((Arg::Number(self.number()?), col))
            }
            Some(q @ ('"' | '\'')) => {
                self.bump();
                let start = self.pos;
                while self.peek().is_some_and(|c| c != q) {
                    self.pos += 1;
                }
                if self.peek().is_none() {
                    return Err(self.err("unterminated string"));
                }
                let s = self.slice(start, self.pos);
                self.bump();
                Ok((Arg::Ident(s), col))
            }
            Some(c) if c.is_ascii_alphabetic() || c == '_' => {
                Ok((Arg::Ident(self.ident().expect("checked start")), col))
            }
            Some(c) => Err(self.err(format!("unexpected `{c}` in argument list"))),
            None => Err(self.err("unexpected end of line in argument list")),
        }
    }
}

fn parse_line(text: &str, line: usize) -> Result<Option<Instruction>, ParseError> {
    let mut cur = Cursor::new(text, line);
    if cur.at_end() {
        return Ok(None);
    }
    let mut name = cur
        .ident()
        .ok_or_else(|| cur.err("expected an API call such as `move_to(...)`"))?;
    // qualified calls such as `lib.move_to(...)`
    while cur.peek() == Some('.') {
        cur.bump();
        name = cur
            .ident()
            .ok_or_else(|| cur.err("expected a name after `.`"))?;
    }
    cur.expect('(')?;
    let mut args = Vec::new();
    cur.skip_ws();
    if cur.peek() == Some(')') {
        cur.bump();
    } else {
        loop {
            args.push(cur.arg()?);
            cur.skip_ws();
            match cur.bump() {
                Some(',') => continue,
                Some(')') => break,
                Some(c) => {
                    cur.pos -= 1;
                    return Err(cur.err(format!("expected `,` or `)`, found `{c}`")));
                }
                None => return Err(cur.err("missing `)`")),
            }
        }
    }
    cur.skip_ws();
    if cur.peek() == Some(';') {
        cur.bump();
    }
    if !cur.at_end() {
        return Err(cur.err("unexpected text after call"));
    }

    let arity = |expected: usize| -> Result<(), ParseError> {
        if args.len() != expected {
            return Err(ParseError::Arity {
                line,
                name: name.clone(),
                expected,
                found: args.len(),
            });
        }
        Ok(())
    };
    let number = |i: usize| -> Result<f64, ParseError> {
        match &args[i] {
            (Arg::Number(v), _) => Ok(*v),
            (Arg::Ident(s), col) => Err(ParseError::InvalidArgument {
                line,
                column: *col,
                message: format!("`{name}` expects a number, found `{s}`"),
            }),
        }
    };

    let op = match name.as_str() {
        "move_to" => {
            arity(3)?;
            Op::MoveTo(Vec3::new(number(0)?, number(1)?, number(2)?))
        }
        "open_gripper" => {
            arity(0)?;
            Op::OpenGripper
        }
        "close_gripper" => {
            arity(0)?;
            Op::CloseGripper
        }
        "reduce_speed" => {
            arity(1)?;
            let p = number(0)?;
            if !(p > 0.0 && p <= 100.0) {
                return Err(ParseError::InvalidArgument {
                    line,
                    column: args[0].1,
                    message: format!("speed percent must be in (0, 100], got {p}"),
                });
            }
            Op::ReduceSpeed(p)
        }
        "avoid_collision" => {
            arity(1)?;
            match &args[0] {
                (Arg::Ident(id), _) => Op::AvoidCollision(id.clone()),
                (Arg::Number(_), col) => {
                    return Err(ParseError::InvalidArgument {
                        line,
                        column: *col,
                        message: "`avoid_collision` expects an object id".into(),
                    })
                }
            }
        }
        _ => return Err(ParseError::UnknownApi { line, name }),
    };
    Ok(Some(Instruction { op, line }))
}

/// Parses a straight-line program: one call per line, `#` starts a comment.
pub fn parse_program(source: &str) -> Result<RobotProgram, ParseError> {
    let mut instructions = Vec::new();
    for (i, text) in source.lines().enumerate() {
        if let Some(ins) = parse_line(text, i + 1)? {
            instructions.push(ins);
        }
    }
    if instructions.is_empty() {
        return Err(ParseError::Empty);
    }
    Ok(RobotProgram {
        instructions,
        source: source.to_owned(),
    })
}
