//! Line-delimited record log and snapshot files.
//!
//! A log line is `<len>:<tag> <body> <crc32 hex>` where `<len>` is the byte
//! length of the tag, `<body>` is a single-line UTF-8 JSON object, and the
//! checksum covers the body bytes. Records are grouped into transactions, each
//! closed by a `commit` record; records after the last commit are discarded on
//! recovery, as is a torn or corrupt final line.
//!
//! A snapshot is a `GSNAP v1` header line followed by a `meta` record, the
//! full state as records, and an `end` record holding the record count.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::record::{Commit, End, Meta, Record};

pub const SNAPSHOT_HEADER: &str = "GSNAP v1";
pub const LOG_FILE: &str = "registry.log";
pub const SNAPSHOT_FILE: &str = "registry.gsnap";

#[derive(Debug, Error)]
pub enum LogError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt log line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("corrupt snapshot: {0}")]
    Snapshot(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum LineError {
    #[error("missing tag length prefix")]
    NoPrefix,
    #[error("bad tag")]
    BadTag,
    #[error("missing checksum")]
    NoChecksum,
    #[error("checksum mismatch")]
    Checksum,
    #[error("unknown record tag {0:?}")]
    UnknownTag(String),
    #[error("malformed body: {0}")]
    Body(String),
}

pub fn encode_line(tag: &str, body: &str) -> String {
    let crc = crc32fast::hash(body.as_bytes());
    format!("{}:{} {} {:08x}", tag.len(), tag, body, crc)
}

/// Splits a line (without its newline) into tag and checksum-verified body.
pub fn decode_line(line: &str) -> Result<(&str, &str), LineError> {
    let (len, rest) = line.split_once(':').ok_or(LineError::NoPrefix)?;
    let len: usize = len.parse().map_err(|_| LineError::NoPrefix)?;
    if rest.len() < len || !rest.is_char_boundary(len) {
        return Err(LineError::BadTag);
    }
    let (tag, rest) = rest.split_at(len);
    let rest = rest.strip_prefix(' ').ok_or(LineError::BadTag)?;
    let (body, crc) = rest.rsplit_once(' ').ok_or(LineError::NoChecksum)?;
    if crc.len() != 8 {
        return Err(LineError::NoChecksum);
    }
    let crc = u32::from_str_radix(crc, 16).map_err(|_| LineError::NoChecksum)?;
    if crc32fast::hash(body.as_bytes()) != crc {
        return Err(LineError::Checksum);
    }
    Ok((tag, body))
}

/// Transactions recovered from a log, plus the byte length of the valid prefix.
#[derive(Debug, Default)]
pub struct Recovered {
    pub transactions: Vec<(u64, Vec<Record>)>,
    pub valid_len: u64,
    pub discarded_bytes: u64,
}

/// Parses log bytes. Only the final line may be damaged; damage anywhere
/// earlier is reported as corruption.
pub fn parse_log(bytes: &[u8]) -> Result<Recovered, LogError> {
    let mut out = Recovered::default();
    let mut pending: Vec<Record> = Vec::new();
    let mut offset = 0usize;
    let mut line_no = 0usize;

    while offset < bytes.len() {
        line_no += 1;
        let Some(nl) = bytes[offset..].iter().position(|b| *b == b'\n') else {
            // torn write: no newline
            break;
        };
        let raw = &bytes[offset..offset + nl];
        let next = offset + nl + 1;
        let parsed = std::str::from_utf8(raw)
            .map_err(|e| LineError::Body(e.to_string()))
            .and_then(|line| {
                let (tag, body) = decode_line(line)?;
                Record::decode(tag, body)
            });
        match parsed {
            Ok(Record::Commit(Commit { seq })) => {
                out.transactions.push((seq, std::mem::take(&mut pending)));
                out.valid_len = next as u64;
            }
            Ok(record) => pending.push(record),
            Err(e) => {
                if next < bytes.len() {
                    return Err(LogError::Corrupt {
                        line: line_no,
                        reason: e.to_string(),
                    });
                }
                break;
            }
        }
        offset = next;
    }
    out.discarded_bytes = bytes.len() as u64 - out.valid_len;
    Ok(out)
}

pub fn encode_transaction(seq: u64, records: &[Record]) -> String {
    let mut buf = String::new();
    for r in records {
        buf.push_str(&r.encode());
        buf.push('\n');
    }
    buf.push_str(&Record::Commit(Commit { seq }).encode());
    buf.push('\n');
    buf
}

/// Appending handle on `registry.log`.
#[derive(Debug)]
pub struct LogFile {
    dir: PathBuf,
    file: File,
    sync: bool,
}

impl LogFile {
    /// Opens (creating if needed) the log in `dir`, returning the parsed
    /// committed transactions. The file is truncated to its valid prefix.
    pub fn open(dir: &Path, sync: bool) -> Result<(Self, Recovered), LogError> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOG_FILE);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let recovered = parse_log(&bytes)?;
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        if recovered.discarded_bytes > 0 {
            tracing::warn!(bytes = recovered.discarded_bytes, "discarding uncommitted log tail");
            file.set_len(recovered.valid_len)?;
            file.sync_all()?;
        }
        Ok((
            Self {
                dir: dir.to_path_buf(),
                file,
                sync,
            },
            recovered,
        ))
    }

    pub fn append(&mut self, chunk: &str) -> io::Result<()> {
        self.file.write_all(chunk.as_bytes())?;
        self.file.flush()?;
        if self.sync {
            self.file.sync_data()?;
        }
        Ok(())
    }

    pub fn truncate(&mut self) -> io::Result<()> {
        self.truncate_to(0)
    }

    pub fn truncate_to(&mut self, len: u64) -> io::Result<()> {
        self.file.set_len(len)?;
        self.file.sync_all()
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

pub fn encode_snapshot(seq: u64, records: &[Record]) -> String {
    let mut buf = String::from(SNAPSHOT_HEADER);
    buf.push('\n');
    buf.push_str(&Record::Meta(Meta { seq }).encode());
    buf.push('\n');
    for r in records {
        buf.push_str(&r.encode());
        buf.push('\n');
    }
    buf.push_str(
        &Record::End(End {
            records: records.len() as u64,
        })
        .encode(),
    );
    buf.push('\n');
    buf
}

pub fn decode_snapshot(text: &str) -> Result<(u64, Vec<Record>), LogError> {
    let bad = |m: &str| LogError::Snapshot(m.to_string());
    let mut lines = text.lines();
    if lines.next() != Some(SNAPSHOT_HEADER) {
        return Err(bad("missing GSNAP v1 header"));
    }
    let mut decoded = Vec::new();
    for line in lines {
        let (tag, body) = decode_line(line).map_err(|e| bad(&e.to_string()))?;
        decoded.push(Record::decode(tag, body).map_err(|e| bad(&e.to_string()))?);
    }
    let Some(Record::Meta(Meta { seq })) = decoded.first().cloned() else {
        return Err(bad("missing meta record"));
    };
    let Some(Record::End(End { records })) = decoded.last().cloned() else {
        return Err(bad("missing end record"));
    };
    let body: Vec<Record> = decoded[1..decoded.len() - 1].to_vec();
    if body.len() as u64 != records {
        return Err(bad("record count mismatch"));
    }
    Ok((seq, body))
}

/// Writes the snapshot atomically: temp file, fsync, rename.
pub fn write_snapshot(dir: &Path, seq: u64, records: &[Record]) -> io::Result<()> {
    let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(encode_snapshot(seq, records).as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, dir.join(SNAPSHOT_FILE))?;
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
    Ok(())
}

pub fn read_snapshot(dir: &Path) -> Result<Option<(u64, Vec<Record>)>, LogError> {
    match fs::read_to_string(dir.join(SNAPSHOT_FILE)) {
        Ok(text) => decode_snapshot(&text).map(Some),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}
