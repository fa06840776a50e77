//! Wire envelope.
//!
//! ```text
//! BXE1 <msg_type> <sender> <seq> <len>\n
//! <len bytes of payload>\n
//! ```
//!
//! `msg_type` matches `[A-Z][A-Z0-9-]*`, `sender` is printable ASCII
//! without spaces, `seq` and `len` are canonical decimals. The payload is
//! a [`Payload`] encoding. Each envelope is self-delimiting, so a stream
//! is a plain concatenation of envelopes.

use std::fmt;
use std::io::{self, BufRead, Read};

use bandx_core::codec::Payload;
use thiserror::Error;

pub const MAGIC: &str = "BXE1";
pub const MAX_PAYLOAD: usize = 16 << 20;
const MAX_HEADER: u64 = 1024;

/// Message type identifiers.
pub mod msg {
    pub const POST_OFFER: &str = "POST-OFFER";
    pub const POSTED: &str = "POSTED";
    pub const QUERY: &str = "QUERY";
    pub const OFFERS: &str = "OFFERS";
    pub const COMPOSE: &str = "COMPOSE";
    pub const PLAN: &str = "PLAN";
    pub const CHALLENGE_REQ: &str = "CHALLENGE-REQ";
    pub const CHALLENGE_RESP: &str = "CHALLENGE-RESP";
    pub const RESERVE_SPOT: &str = "RESERVE-SPOT";
    pub const RESERVED: &str = "RESERVED";
    pub const BOUNDARY_REFERRAL: &str = "BOUNDARY-REFERRAL";
    pub const BOOK_FUTURE: &str = "BOOK-FUTURE";
    pub const BOOKED: &str = "BOOKED";
    pub const ACTIVATE: &str = "ACTIVATE";
    pub const ACTIVATED: &str = "ACTIVATED";
    pub const KEEPALIVE: &str = "KEEPALIVE";
    pub const KEEPALIVE_OK: &str = "KEEPALIVE-OK";
    pub const TEARDOWN_NOTIFY: &str = "TEARDOWN-NOTIFY";
    pub const TORN_DOWN: &str = "TORN-DOWN";
    pub const COLLECT: &str = "COLLECT";
    pub const RECORDS: &str = "RECORDS";
    pub const DEPOSIT: &str = "DEPOSIT";
    pub const SETTLED: &str = "SETTLED";
    pub const ISSUE_CWC: &str = "ISSUE-CWC";
    pub const CWC: &str = "CWC";
    pub const CLOCK_SET: &str = "CLOCK-SET";
    pub const CLOCK_OK: &str = "CLOCK-OK";
    pub const PROBE: &str = "PROBE";
    pub const PROBED: &str = "PROBED";
    pub const REPORT_REQ: &str = "REPORT-REQ";
    pub const REPORT: &str = "REPORT";
    pub const ERROR: &str = "ERROR";
    pub const PROTOCOL_ERROR: &str = "PROTOCOL-ERROR";
}

#[derive(Debug, Error)]
pub enum EnvelopeError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    /// The header line was unusable; the stream is positioned after it.
    #[error("bad header: {0}")]
    Header(String),
    /// Header and body were framed correctly but the body is not a payload.
    #[error("bad payload: {0}")]
    Payload(String),
    /// The stream ended inside an envelope.
    #[error("truncated envelope")]
    Truncated,
}

impl EnvelopeError {
    /// Whether the stream is still aligned on an envelope boundary.
    pub fn recoverable(&self) -> bool {
        matches!(self, EnvelopeError::Header(_) | EnvelopeError::Payload(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub msg_type: String,
    pub sender: String,
    pub seq: u64,
    pub payload: Payload,
}

pub fn is_msg_type(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(|c| c.is_ascii_uppercase())
        && chars.all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '-')
}

pub fn is_sender(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| (0x21..0x7f).contains(&b))
}

impl Envelope {
    /// Panics if `msg_type` or `sender` is not encodable.
    pub fn new(msg_type: &str, sender: &str, seq: u64, payload: Payload) -> Envelope {
        assert!(is_msg_type(msg_type), "invalid msg_type `{msg_type}`");
        assert!(is_sender(sender), "invalid sender `{sender}`");
        Envelope {
            msg_type: msg_type.to_string(),
            sender: sender.to_string(),
            seq,
            payload,
        }
    }

    pub fn encode(&self) -> String {
        let body = self.payload.encode();
        format!("{MAGIC} {} {} {} {}\n{body}\n", self.msg_type, self.sender, self.seq, body.len())
    }

    /// Decodes exactly one envelope occupying all of `text`.
    pub fn decode(text: &str) -> Result<Envelope, EnvelopeError> {
        let mut cursor = io::Cursor::new(text.as_bytes());
        let env = read_envelope(&mut cursor)?.ok_or(EnvelopeError::Truncated)?;
        if (cursor.position() as usize) != text.len() {
            return Err(EnvelopeError::Payload("trailing bytes".into()));
        }
        Ok(env)
    }

    pub fn is_error(&self) -> bool {
        self.msg_type == msg::ERROR || self.msg_type == msg::PROTOCOL_ERROR
    }
}

impl fmt::Display for Envelope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.encode())
    }
}

struct Header {
    msg_type: String,
    sender: String,
    seq: u64,
    len: usize,
}

fn canonical_u64(s: &str) -> Option<u64> {
    if s.is_empty() || (s.len() > 1 && s.starts_with('0')) || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

fn parse_header(line: &str) -> Result<Header, String> {
    let parts: Vec<&str> = line.split(' ').collect();
    let [magic, msg_type, sender, seq, len] = parts[..] else {
        return Err(format!("expected 5 header fields, found {}", parts.len()));
    };
    if magic != MAGIC {
        return Err(format!("bad magic `{magic}`"));
    }
    if !is_msg_type(msg_type) {
        return Err(format!("bad msg_type `{msg_type}`"));
    }
    if !is_sender(sender) {
        return Err("bad sender".into());
    }
    let seq = canonical_u64(seq).ok_or_else(|| format!("bad sequence number `{seq}`"))?;
    let len = canonical_u64(len)
        .map(|l| l as usize)
        .filter(|&l| l <= MAX_PAYLOAD)
        .ok_or_else(|| format!("bad length `{len}`"))?;
    Ok(Header {
        msg_type: msg_type.to_string(),
        sender: sender.to_string(),
        seq,
        len,
    })
}

/// Reads the next envelope; `Ok(None)` at a clean end of stream.
///
/// After a recoverable error the reader sits at the start of the next
/// envelope (or line, for a bad header).
pub fn read_envelope<R: BufRead>(r: &mut R) -> Result<Option<Envelope>, EnvelopeError> {
    let mut raw = Vec::new();
    let n = r.by_ref().take(MAX_HEADER).read_until(b'\n', &mut raw)?;
    if n == 0 {
        return Ok(None);
    }
    if raw.last() != Some(&b'\n') {
        if n as u64 == MAX_HEADER {
            let mut sink = Vec::new();
            r.read_until(b'\n', &mut sink)?;
            return Err(EnvelopeError::Header("header line too long".into()));
        }
        return Err(EnvelopeError::Truncated);
    }
    raw.pop();
    let line = String::from_utf8(raw).map_err(|_| EnvelopeError::Header("header is not UTF-8".into()))?;
    let header = parse_header(&line).map_err(EnvelopeError::Header)?;
    let mut body = vec![0u8; header.len + 1];
    r.read_exact(&mut body).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => EnvelopeError::Truncated,
        _ => EnvelopeError::Io(e),
    })?;
    if body.pop() != Some(b'\n') {
        return Err(EnvelopeError::Payload("payload not followed by newline".into()));
    }
    let text = String::from_utf8(body).map_err(|_| EnvelopeError::Payload("payload is not UTF-8".into()))?;
    let payload = Payload::decode(&text).map_err(|e| EnvelopeError::Payload(e.to_string()))?;
    Ok(Some(Envelope {
        msg_type: header.msg_type,
        sender: header.sender,
        seq: header.seq,
        payload,
    }))
}

/// Splits a transcript back into envelopes.
pub fn decode_stream(text: &str) -> Result<Vec<Envelope>, EnvelopeError> {
    let mut cursor = io::Cursor::new(text.as_bytes());
    let mut out = Vec::new();
    while let Some(env) = read_envelope(&mut cursor)? {
        out.push(env);
    }
    Ok(out)
}
