//! Append-only settlement journal.
//!
//! ```text
//! BXJ1 <len> <sha256-hex-16>\n
//! <len bytes: an encoded Payload>\n
//! ```
//!
//! `len` is decimal without leading zeros; the digest is the first 16 hex
//! digits of SHA-256 over the payload bytes. Each append is flushed and
//! synced before returning. On open, a damaged final entry (a crash in
//! mid-append) is truncated away; damage followed by further intact
//! entries is reported as corruption.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::Payload;

const MAGIC: &str = "BXJ1";

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("journal i/o: {0}")]
    Io(#[from] io::Error),
    #[error("journal corrupt at byte {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },
}

#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: File,
    entries: u64,
}

fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)[..8].iter().map(|b| format!("{b:02x}")).collect()
}

pub fn encode_entry(payload: &Payload) -> Vec<u8> {
    let body = payload.encode();
    let mut out = format!("{MAGIC} {} {}\n", body.len(), digest(body.as_bytes())).into_bytes();
    out.extend_from_slice(body.as_bytes());
    out.push(b'\n');
    out
}

/// Outcome of scanning journal bytes.
#[derive(Debug)]
pub struct Scan {
    pub entries: Vec<Payload>,
    /// Length of the intact prefix.
    pub good_len: usize,
    /// Why scanning stopped before the end, if it did.
    pub damage: Option<String>,
}

pub fn scan(bytes: &[u8]) -> Scan {
    let mut entries = Vec::new();
    let mut at = 0;
    let damage = loop {
        if at == bytes.len() {
            break None;
        }
        match read_entry(&bytes[at..]) {
            Ok((payload, used)) => {
                entries.push(payload);
                at += used;
            }
            Err(reason) => break Some(reason),
        }
    };
    Scan {
        entries,
        good_len: at,
        damage,
    }
}

fn read_entry(bytes: &[u8]) -> Result<(Payload, usize), String> {
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or("header without newline")?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| "header not utf-8")?;
    let mut parts = header.split(' ');
    if parts.next() != Some(MAGIC) {
        return Err("bad magic".into());
    }
    let len_text = parts.next().ok_or("missing length")?;
    let len: usize = len_text.parse().map_err(|_| "bad length")?;
    if len.to_string() != len_text {
        return Err("non-canonical length".into());
    }
    let want = parts.next().ok_or("missing digest")?;
    if parts.next().is_some() {
        return Err("trailing header fields".into());
    }
    let start = nl + 1;
    let end = start.checked_add(len).ok_or("length overflow")?;
    if bytes.len() < end + 1 {
        return Err("payload truncated".into());
    }
    if bytes[end] != b'\n' {
        return Err("missing entry terminator".into());
    }
    let body = &bytes[start..end];
    if digest(body) != want {
        return Err("digest mismatch".into());
    }
    let text = std::str::from_utf8(body).map_err(|_| "payload not utf-8")?;
    let payload = Payload::decode(text).map_err(|e| e.to_string())?;
    Ok((payload, end + 1))
}

impl Journal {
    /// Opens or creates the journal and returns its intact entries.
    pub fn open(path: impl AsRef<Path>) -> Result<(Journal, Vec<Payload>), JournalError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(&path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let s = scan(&bytes);
        if let Some(reason) = s.damage {
            if later_entry_intact(&bytes[s.good_len..]) {
                return Err(JournalError::Corrupt {
                    offset: s.good_len as u64,
                    reason,
                });
            }
            file.set_len(s.good_len as u64)?;
            file.sync_all()?;
        }
        file.seek(SeekFrom::End(0))?;
        let entries = s.entries.len() as u64;
        Ok((Journal { path, file, entries }, s.entries))
    }

    pub fn append(&mut self, payload: &Payload) -> Result<(), JournalError> {
        self.file.write_all(&encode_entry(payload))?;
        self.file.flush()?;
        self.file.sync_data()?;
        self.entries += 1;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> u64 {
        self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries == 0
    }
}

/// Whether any intact entry starts after the first byte of `tail`.
fn later_entry_intact(tail: &[u8]) -> bool {
    let magic = MAGIC.as_bytes();
    (1..tail.len()).any(|i| {
        tail[i - 1] == b'\n' && tail[i..].starts_with(magic) && read_entry(&tail[i..]).is_ok()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(i: u32) -> Payload {
        Payload::new().with("n", i).with_blob("body", format!("entry {i}\nline two"))
    }

    #[test]
    fn reopen_returns_entries() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j");
        let (mut j, prior) = Journal::open(&path).unwrap();
        assert!(prior.is_empty());
        for i in 0..3 {
            j.append(&entry(i)).unwrap();
        }
        drop(j);
        let (j, prior) = Journal::open(&path).unwrap();
        assert_eq!(prior, (0..3).map(entry).collect::<Vec<_>>());
        assert_eq!(j.len(), 3);
    }

    #[test]
    fn every_torn_tail_is_truncated() {
        let whole: Vec<u8> = (0..3).flat_map(|i| encode_entry(&entry(i))).collect();
        let two = encode_entry(&entry(0)).len() + encode_entry(&entry(1)).len();
        let dir = tempfile::tempdir().unwrap();
        for cut in two..whole.len() {
            let path = dir.path().join(format!("cut{cut}"));
            std::fs::write(&path, &whole[..cut]).unwrap();
            let (mut j, prior) = Journal::open(&path).unwrap();
            assert_eq!(prior.len(), 2, "cut at {cut}");
            j.append(&entry(9)).unwrap();
            drop(j);
            let (_, again) = Journal::open(&path).unwrap();
            assert_eq!(again.len(), 3);
            assert_eq!(again[2], entry(9));
        }
    }

    #[test]
    fn damage_before_intact_entries_is_corruption() {
        let mut bytes: Vec<u8> = (0..3).flat_map(|i| encode_entry(&entry(i))).collect();
        let first = encode_entry(&entry(0)).len();
        bytes[first + 25] ^= 0x01;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j");
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(Journal::open(&path), Err(JournalError::Corrupt { .. })));
    }
}
