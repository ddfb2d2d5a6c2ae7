//! Transition conditions.
//!
//! A condition is a small boolean expression over registry keys. The net
//! file only ever carries the textual form; predicates are bound to the
//! keys when an executor is constructed.
//!
//! Grammar:
//!
//! ```text
//! expr   := term ('|' term)*
//! term   := factor ('&' factor)*
//! factor := '!' factor | '(' expr ')' | 'true' | 'false' | key
//! key    := [A-Za-z0-9_.]+
//! ```

use std::fmt;

use thiserror::Error;

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub enum Condition {
    #[default]
    True,
    False,
    Key(String),
    Not(Box<Condition>),
    /// Disjunction. An empty disjunction is false.
    Any(Vec<Condition>),
    /// Conjunction. An empty conjunction is true.
    All(Vec<Condition>),
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid condition `{text}` at offset {offset}: {message}")]
pub struct ConditionParseError {
    pub text: String,
    pub offset: usize,
    pub message: String,
}

impl Condition {
    pub fn key(key: impl Into<String>) -> Self {
        Condition::Key(key.into())
    }

    pub fn negate(self) -> Self {
        match self {
            Condition::True => Condition::False,
            Condition::False => Condition::True,
            Condition::Not(inner) => *inner,
            other => Condition::Not(Box::new(other)),
        }
    }

    pub fn is_true(&self) -> bool {
        matches!(self, Condition::True)
    }

    /// Registry keys referenced by this condition, in first-occurrence order.
    pub fn keys(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_keys(&mut out);
        out
    }

    fn collect_keys<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Condition::True | Condition::False => {}
            Condition::Key(k) => {
                if !out.contains(&k.as_str()) {
                    out.push(k);
                }
            }
            Condition::Not(inner) => inner.collect_keys(out),
            Condition::Any(items) | Condition::All(items) => {
                for item in items {
                    item.collect_keys(out);
                }
            }
        }
    }

    /// Evaluates the expression; `leaf` supplies the value of each key.
    pub fn eval(&self, leaf: &mut dyn FnMut(&str) -> bool) -> bool {
        match self {
            Condition::True => true,
            Condition::False => false,
            Condition::Key(k) => leaf(k),
            Condition::Not(inner) => !inner.eval(leaf),
            Condition::Any(items) => items.iter().any(|c| c.eval(leaf)),
            Condition::All(items) => items.iter().all(|c| c.eval(leaf)),
        }
    }

    pub fn parse(text: &str) -> Result<Self, ConditionParseError> {
        let mut parser = Parser {
            text,
            bytes: text.as_bytes(),
            pos: 0,
        };
        let cond = parser.expr()?;
        parser.skip_ws();
        if parser.pos != parser.bytes.len() {
            return Err(parser.error("trailing input"));
        }
        Ok(cond)
    }

    fn precedence(&self) -> u8 {
        match self {
            Condition::Any(items) if items.len() > 1 => 0,
            Condition::All(items) if items.len() > 1 => 1,
            _ => 2,
        }
    }

    fn fmt_at(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let wrap = self.precedence() < min;
        if wrap {
            f.write_str("(")?;
        }
        match self {
            Condition::True => f.write_str("true")?,
            Condition::False => f.write_str("false")?,
            Condition::Key(k) => f.write_str(k)?,
            Condition::Not(inner) => {
                f.write_str("!")?;
                inner.fmt_at(f, 2)?;
            }
            Condition::Any(items) => match items.len() {
                0 => f.write_str("false")?,
                1 => items[0].fmt_at(f, min)?,
                _ => {
                    for (i, item) in items.iter().enumerate() {
                        if i > 0 {
                            f.write_str(" | ")?;
                        }
                        item.fmt_at(f, 1)?;
                    }
                }
            },
            Condition::All(items) => match items.len() {
                0 => f.write_str("true")?,
                1 => items[0].fmt_at(f, min)?,
                _ => {
                    for (i, item) in items.iter().enumerate() {
                        if i > 0 {
                            f.write_str(" & ")?;
                        }
                        item.fmt_at(f, 2)?;
                    }
                }
            },
        }
        if wrap {
            f.write_str(")")?;
        }
        Ok(())
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_at(f, 0)
    }
}

pub(crate) fn is_key_char(c: u8) -> bool {
    c.is_ascii_alphanumeric() || c == b'_' || c == b'.'
}

struct Parser<'a> {
    text: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> ConditionParseError {
        ConditionParseError {
            text: self.text.to_string(),
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        self.skip_ws();
        if self.bytes.get(self.pos) == Some(&c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Condition, ConditionParseError> {
        let mut items = vec![self.term()?];
        while self.eat(b'|') {
            items.push(self.term()?);
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap()
        } else {
            Condition::Any(items)
        })
    }

    fn term(&mut self) -> Result<Condition, ConditionParseError> {
        let mut items = vec![self.factor()?];
        while self.eat(b'&') {
            items.push(self.factor()?);
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap()
        } else {
            Condition::All(items)
        })
    }

    fn factor(&mut self) -> Result<Condition, ConditionParseError> {
        if self.eat(b'!') {
            return Ok(Condition::Not(Box::new(self.factor()?)));
        }
        if self.eat(b'(') {
            let inner = self.expr()?;
            if !self.eat(b')') {
                return Err(self.error("expected `)`"));
            }
            return Ok(inner);
        }
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len() && is_key_char(self.bytes[self.pos]) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error("expected a key"));
        }
        Ok(match &self.text[start..self.pos] {
            "true" => Condition::True,
            "false" => Condition::False,
            key => Condition::Key(key.to_string()),
        })
    }
}
