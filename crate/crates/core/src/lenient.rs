//! A forgiving reader for JSON-like documents.
//!
//! Workflows written by language models (and the hand-written exemplars they
//! learn from) are frequently not strict JSON. This reader accepts:
//!
//! - trailing commas in objects and arrays,
//! - missing commas between members or elements,
//! - object members without a key (`{ "step5[image]" }`).
//!
//! Everything else follows the JSON grammar. Member order is preserved.

use std::fmt;

const MAX_DEPTH: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub enum Doc {
    Null,
    Bool(bool),
    Number(f64),
    Str(String),
    Array(Vec<Doc>),
    Object(Vec<Member>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    /// `None` for a key-less member.
    pub key: Option<String>,
    pub value: Doc,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadError {
    pub offset: usize,
    pub message: String,
}

impl fmt::Display for ReadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at byte {}", self.message, self.offset)
    }
}

impl std::error::Error for ReadError {}

impl Doc {
    pub fn get(&self, key: &str) -> Option<&Doc> {
        match self {
            Doc::Object(members) => members
                .iter()
                .find(|m| m.key.as_deref() == Some(key))
                .map(|m| &m.value),
            _ => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Doc::Null => "null",
            Doc::Bool(_) => "boolean",
            Doc::Number(_) => "number",
            Doc::Str(_) => "string",
            Doc::Array(_) => "array",
            Doc::Object(_) => "object",
        }
    }

    /// Lossy conversion into a strict JSON value. Key-less members are
    /// dropped; non-finite numbers become null.
    pub fn to_json(&self) -> serde_json::Value {
        use serde_json::Value;
        match self {
            Doc::Null => Value::Null,
            Doc::Bool(b) => Value::Bool(*b),
            Doc::Number(n) => serde_json::Number::from_f64(*n)
                .map(|n| {
                    if n.as_f64().is_some_and(|f| f.fract() == 0.0 && f.abs() < 9.0e15) {
                        Value::Number((n.as_f64().unwrap() as i64).into())
                    } else {
                        Value::Number(n)
                    }
                })
                .unwrap_or(Value::Null),
            Doc::Str(s) => Value::String(s.clone()),
            Doc::Array(items) => Value::Array(items.iter().map(Doc::to_json).collect()),
            Doc::Object(members) => Value::Object(
                members
                    .iter()
                    .filter_map(|m| m.key.as_ref().map(|k| (k.clone(), m.value.to_json())))
                    .collect(),
            ),
        }
    }
}

pub fn read(input: &str) -> Result<Doc, ReadError> {
    let mut reader = Reader {
        src: input.as_bytes(),
        pos: 0,
        text: input,
    };
    reader.skip_ws();
    let doc = reader.value(0)?;
    reader.skip_ws();
    if reader.pos != reader.src.len() {
        return Err(reader.error("trailing characters after document"));
    }
    Ok(doc)
}

struct Reader<'a> {
    src: &'a [u8],
    text: &'a str,
    pos: usize,
}

impl<'a> Reader<'a> {
    fn error(&self, message: impl Into<String>) -> ReadError {
        ReadError {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while let Some(b) = self.peek() {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn expect_literal(&mut self, lit: &str) -> Result<(), ReadError> {
        if self.src[self.pos..].starts_with(lit.as_bytes()) {
            self.pos += lit.len();
            Ok(())
        } else {
            Err(self.error(format!("expected `{lit}`")))
        }
    }

    fn value(&mut self, depth: usize) -> Result<Doc, ReadError> {
        if depth > MAX_DEPTH {
            return Err(self.error("nesting too deep"));
        }
        match self.peek() {
            None => Err(self.error("unexpected end of document")),
            Some(b'{') => self.object(depth),
            Some(b'[') => self.array(depth),
            Some(b'"') => Ok(Doc::Str(self.string()?)),
            Some(b't') => self.expect_literal("true").map(|_| Doc::Bool(true)),
            Some(b'f') => self.expect_literal("false").map(|_| Doc::Bool(false)),
            Some(b'n') => self.expect_literal("null").map(|_| Doc::Null),
            Some(b'-' | b'0'..=b'9') => self.number(),
            Some(b) => Err(self.error(format!("unexpected character `{}`", b as char))),
        }
    }

    fn object(&mut self, depth: usize) -> Result<Doc, ReadError> {
        self.pos += 1;
        let mut members = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                None => return Err(self.error("unterminated object")),
                Some(b'}') => {
                    self.pos += 1;
                    return Ok(Doc::Object(members));
                }
                Some(b',') => {
                    self.pos += 1;
                    continue;
                }
                Some(b'"') => {
                    let first = self.string()?;
                    self.skip_ws();
                    if self.peek() == Some(b':') {
                        self.pos += 1;
                        self.skip_ws();
                        let value = self.value(depth + 1)?;
                        members.push(Member {
                            key: Some(first),
                            value,
                        });
                    } else {
                        members.push(Member {
                            key: None,
                            value: Doc::Str(first),
                        });
                    }
                }
                Some(_) => return Err(self.error("expected object key")),
            }
        }
    }

    fn array(&mut self, depth: usize) -> Result<Doc, ReadError> {
        self.pos += 1;
        let mut items = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                None => return Err(self.error("unterminated array")),
                Some(b']') => {
                    self.pos += 1;
                    return Ok(Doc::Array(items));
                }
                Some(b',') => {
                    self.pos += 1;
                }
                Some(_) => items.push(self.value(depth + 1)?),
            }
        }
    }

    fn string(&mut self) -> Result<String, ReadError> {
        let start = self.pos;
        self.pos += 1;
        let mut out = String::new();
        let mut run_start = self.pos;
        loop {
            match self.peek() {
                None => {
                    self.pos = start;
                    return Err(self.error("unterminated string"));
                }
                Some(b'"') => {
                    out.push_str(&self.text[run_start..self.pos]);
                    self.pos += 1;
                    return Ok(out);
                }
                Some(b'\\') => {
                    out.push_str(&self.text[run_start..self.pos]);
                    self.pos += 1;
                    let esc = self.peek().ok_or_else(|| self.error("unterminated escape"))?;
                    self.pos += 1;
                    match esc {
                        b'"' => out.push('"'),
                        b'\\' => out.push('\\'),
                        b'/' => out.push('/'),
                        b'b' => out.push('\u{8}'),
                        b'f' => out.push('\u{c}'),
                        b'n' => out.push('\n'),
                        b'r' => out.push('\r'),
                        b't' => out.push('\t'),
                        b'u' => out.push(self.unicode_escape()?),
                        _ => return Err(self.error("invalid escape")),
                    }
                    run_start = self.pos;
                }
                Some(b) if b < 0x20 => return Err(self.error("control character in string")),
                Some(_) => self.pos += 1,
            }
        }
    }

    fn hex4(&mut self) -> Result<u32, ReadError> {
        let digits = self
            .text
            .get(self.pos..self.pos + 4)
            .ok_or_else(|| self.error("truncated unicode escape"))?;
        let v = u32::from_str_radix(digits, 16).map_err(|_| self.error("bad unicode escape"))?;
        self.pos += 4;
        Ok(v)
    }

    fn unicode_escape(&mut self) -> Result<char, ReadError> {
        let hi = self.hex4()?;
        if (0xD800..0xDC00).contains(&hi) {
            if !self.src[self.pos..].starts_with(b"\\u") {
                return Err(self.error("unpaired surrogate"));
            }
            self.pos += 2;
            let lo = self.hex4()?;
            if !(0xDC00..0xE000).contains(&lo) {
                return Err(self.error("unpaired surrogate"));
            }
            let c = 0x10000 + ((hi - 0xD800) << 10) + (lo - 0xDC00);
            char::from_u32(c).ok_or_else(|| self.error("bad surrogate pair"))
        } else {
            char::from_u32(hi).ok_or_else(|| self.error("unpaired surrogate"))
        }
    }

    fn number(&mut self) -> Result<Doc, ReadError> {
        let start = self.pos;
        while let Some(b) = self.peek() {
            if b.is_ascii_digit() || matches!(b, b'-' | b'+' | b'.' | b'e' | b'E') {
                self.pos += 1;
            } else {
                break;
            }
        }
        let token = &self.text[start..self.pos];
        token
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Doc::Number)
            .ok_or_else(|| ReadError {
                offset: start,
                message: format!("invalid number `{token}`"),
            })
    }
}
