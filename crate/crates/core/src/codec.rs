//! Line-oriented payload encoding shared by the settlement journal and the
//! wire envelope.
//!
//! ```text
//! key=value\n            fields, sorted by key, each at most once
//! @name <len>\n<bytes>\n  blobs, in insertion order, names may repeat
//! ```
//!
//! Keys match `[A-Za-z0-9_.-]+`. In values `\` is written `\\` and a
//! newline `\n`; no other escapes exist. Blob bodies are raw UTF-8 of
//! exactly `len` bytes followed by one newline. The encoding of a payload
//! is unique, so `decode(encode(p)) == p` and equal payloads encode to
//! equal bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("payload line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("field `{field}` has invalid value `{value}`")]
    BadField { field: String, value: String },
    #[error("missing blob `{0}`")]
    MissingBlob(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Payload {
    fields: BTreeMap<String, String>,
    blobs: Vec<(String, String)>,
}

pub fn is_key(name: &str) -> bool {
    !name.is_empty()
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'-'))
}

impl Payload {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets a field, replacing any previous value. Panics on an invalid key.
    pub fn set(&mut self, key: &str, value: impl fmt::Display) -> &mut Self {
        assert!(is_key(key), "invalid payload key `{key}`");
        self.fields.insert(key.to_string(), value.to_string());
        self
    }

    pub fn with(mut self, key: &str, value: impl fmt::Display) -> Self {
        self.set(key, value);
        self
    }

    pub fn push_blob(&mut self, name: &str, body: impl Into<String>) -> &mut Self {
        assert!(is_key(name), "invalid blob name `{name}`");
        self.blobs.push((name.to_string(), body.into()));
        self
    }

    pub fn with_blob(mut self, name: &str, body: impl Into<String>) -> Self {
        self.push_blob(name, body);
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str, CodecError> {
        self.get(key).ok_or_else(|| CodecError::MissingField(key.to_string()))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T, CodecError> {
        let raw = self.require(key)?;
        raw.parse().map_err(|_| CodecError::BadField {
            field: key.to_string(),
            value: raw.to_string(),
        })
    }

    pub fn parse_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, CodecError> {
        match self.get(key) {
            None => Ok(None),
            Some(_) => self.parse(key).map(Some),
        }
    }

    pub fn fields(&self) -> &BTreeMap<String, String> {
        &self.fields
    }

    /// Fields under `prefix.`, with the prefix stripped.
    pub fn section(&self, prefix: &str) -> BTreeMap<String, String> {
        let dotted = format!("{prefix}.");
        self.fields
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&dotted).map(|rest| (rest.to_string(), v.clone())))
            .collect()
    }

    pub fn blob(&self, name: &str) -> Option<&str> {
        self.blobs.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_str())
    }

    pub fn require_blob(&self, name: &str) -> Result<&str, CodecError> {
        self.blob(name).ok_or_else(|| CodecError::MissingBlob(name.to_string()))
    }

    pub fn blobs_named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.blobs
            .iter()
            .filter(move |(n, _)| n == name)
            .map(|(_, b)| b.as_str())
    }

    pub fn blobs(&self) -> &[(String, String)] {
        &self.blobs
    }

    pub fn encode(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.fields {
            out.push_str(k);
            out.push('=');
            for c in v.chars() {
                match c {
                    '\\' => out.push_str("\\\\"),
                    '\n' => out.push_str("\\n"),
                    c => out.push(c),
                }
            }
            out.push('\n');
        }
        for (name, body) in &self.blobs {
            out.push('@');
            out.push_str(name);
            out.push(' ');
            out.push_str(&body.len().to_string());
            out.push('\n');
            out.push_str(body);
            out.push('\n');
        }
        out
    }

    pub fn decode(text: &str) -> Result<Payload, CodecError> {
        let mut p = Payload::new();
        let mut rest = text;
        let mut line = 1;
        let mut last_key: Option<String> = None;
        while !rest.is_empty() {
            let bad = |reason: &str| CodecError::Malformed {
                line,
                reason: reason.to_string(),
            };
            let nl = rest.find('\n').ok_or_else(|| bad("unterminated line"))?;
            let head = &rest[..nl];
            rest = &rest[nl + 1..];
            if let Some(spec) = head.strip_prefix('@') {
                let (name, len) = spec.split_once(' ').ok_or_else(|| bad("blob header lacks length"))?;
                if !is_key(name) {
                    return Err(bad("invalid blob name"));
                }
                let len: usize = canonical_usize(len).ok_or_else(|| bad("invalid blob length"))?;
                if rest.len() < len + 1 || !rest.is_char_boundary(len) || rest.as_bytes()[len] != b'\n' {
                    return Err(bad("blob body truncated"));
                }
                let body = &rest[..len];
                line += 1 + body.matches('\n').count() + 1;
                p.blobs.push((name.to_string(), body.to_string()));
                rest = &rest[len + 1..];
                continue;
            }
            if !p.blobs.is_empty() {
                return Err(bad("field after blob"));
            }
            let (key, raw) = head.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            if !is_key(key) {
                return Err(bad("invalid key"));
            }
            if last_key.as_deref().is_some_and(|prev| prev >= key) {
                return Err(bad("fields out of order or repeated"));
            }
            p.fields.insert(key.to_string(), unescape(raw).ok_or_else(|| bad("bad escape"))?);
            last_key = Some(key.to_string());
            line += 1;
        }
        Ok(p)
    }
}

fn canonical_usize(text: &str) -> Option<usize> {
    let n: usize = text.parse().ok()?;
    (n.to_string() == text).then_some(n)
}

fn unescape(raw: &str) -> Option<String> {
    let mut out = String::with_capacity(raw.len());
    let mut chars = raw.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next()? {
                '\\' => out.push('\\'),
                'n' => out.push('\n'),
                _ => return None,
            }
        } else {
            out.push(c);
        }
    }
    Some(out)
}
