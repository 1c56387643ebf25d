//! Append-only NDJSON event log and state snapshots.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use panvas_core::platform::State;
use panvas_core::EventRecord;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const LOG_FILE: &str = "events.ndjson";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("corrupt event log at line {line}: {detail} (last valid sequence: {})", fmt_seq(*last_valid))]
    Corrupt { line: usize, last_valid: Option<u64>, detail: String },
    #[error("event log is unwritable after an earlier append failure")]
    Poisoned,
}

fn fmt_seq(s: Option<u64>) -> String {
    s.map_or_else(|| "none".into(), |s| s.to_string())
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::Corrupt { .. } => "CORRUPT_LOG",
            StoreError::Io { .. } | StoreError::Poisoned => "STORAGE_FAILURE",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

/// What reading the log found.
#[derive(Debug, Default)]
pub struct Loaded {
    pub records: Vec<EventRecord>,
    /// Byte offset just past each record's newline.
    pub ends: Vec<usize>,
    /// Bytes of an incomplete final record that were discarded.
    pub truncated_bytes: usize,
}

impl Loaded {
    pub fn valid_len(&self) -> usize {
        self.ends.last().copied().unwrap_or(0)
    }
}

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Parses log bytes. Every record ends with a newline; a final fragment
/// without one is an interrupted append and is dropped. Any complete line
/// that does not parse is corruption.
pub fn parse_log(bytes: &[u8]) -> Result<Loaded, StoreError> {
    let mut loaded = Loaded::default();
    let mut rest = bytes;
    let mut line = 0;
    while !rest.is_empty() {
        line += 1;
        let Some(end) = rest.iter().position(|&b| b == b'\n') else {
            loaded.truncated_bytes = rest.len();
            break;
        };
        let (text, tail) = rest.split_at(end);
        rest = &tail[1..];
        let offset = bytes.len() - rest.len();
        let last_valid = loaded.records.last().map(|r: &EventRecord| r.sequence);
        let record: EventRecord = serde_json::from_slice(text)
            .map_err(|e| StoreError::Corrupt { line, last_valid, detail: e.to_string() })?;
        let expected = loaded.records.len() as u64;
        if record.sequence != expected {
            return Err(StoreError::Corrupt {
                line,
                last_valid,
                detail: format!("expected sequence {expected}, found {}", record.sequence),
            });
        }
        loaded.records.push(record);
        loaded.ends.push(offset);
    }
    Ok(loaded)
}

pub fn read_log(path: &Path) -> Result<Loaded, StoreError> {
    read_log_bytes(path).and_then(|b| parse_log(&b))
}

pub fn read_log_bytes(path: &Path) -> Result<Vec<u8>, StoreError> {
    match std::fs::read(path) {
        Ok(bytes) => Ok(bytes),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(io_err(path)(e)),
    }
}

/// Writer half of the log. A failed append poisons it: the in-memory state
/// may be ahead of the file, so nothing further may be acknowledged.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
    fsync: bool,
    poisoned: bool,
    /// Running hash of everything written, which snapshots record.
    hasher: Sha256,
}

impl EventLog {
    /// Opens for appending, first cutting the file back to `valid`, the
    /// complete records already on disk, to discard an interrupted tail.
    pub fn open(path: &Path, valid: &[u8], fsync: bool) -> Result<Self, StoreError> {
        let valid_len = valid.len() as u64;
        let file = OpenOptions::new()
            .create(true)
            .read(true)
            .write(true)
            .truncate(false)
            .open(path)
            .map_err(io_err(path))?;
        if file.metadata().map_err(io_err(path))?.len() != valid_len {
            file.set_len(valid_len).map_err(io_err(path))?;
            file.sync_all().map_err(io_err(path))?;
        }
        let mut log = Self { path: path.to_path_buf(), file, fsync, poisoned: false, hasher: Sha256::new() };
        log.hasher.update(valid);
        use std::io::Seek;
        log.file.seek(io::SeekFrom::End(0)).map_err(io_err(path))?;
        Ok(log)
    }

    pub fn is_poisoned(&self) -> bool {
        self.poisoned
    }

    pub fn append(&mut self, record: &EventRecord) -> Result<(), StoreError> {
        if self.poisoned {
            return Err(StoreError::Poisoned);
        }
        let mut line = serde_json::to_vec(record).expect("event records always serialize");
        line.push(b'\n');
        let result = self.file.write_all(&line).and_then(|_| if self.fsync { self.file.sync_data() } else { Ok(()) });
        if let Err(e) = result {
            self.poisoned = true;
            return Err(io_err(&self.path)(e));
        }
        self.hasher.update(&line);
        Ok(())
    }

    pub fn digest(&self) -> String {
        hex::encode(self.hasher.clone().finalize())
    }

    #[cfg(test)]
    pub(crate) fn poison(&mut self) {
        self.poisoned = true;
    }
}

/// Cached response for a request that carried an `Idempotency-Key`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdempotentReply {
    pub sequence: u64,
    pub request: panvas_core::Command,
    pub response: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snapshot {
    pub sequence: u64,
    /// SHA-256 of the log bytes up to and including `sequence`.
    pub log_digest: String,
    pub state: State,
    pub idempotency: BTreeMap<String, IdempotentReply>,
}

pub fn read_snapshot(path: &Path) -> Result<Option<Snapshot>, StoreError> {
    match std::fs::read(path) {
        Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(|e| StoreError::Io {
            path: path.to_path_buf(),
            source: io::Error::new(io::ErrorKind::InvalidData, e),
        }),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_err(path)(e)),
    }
}

/// Writes through a temporary file and a rename so a crash never leaves a
/// half-written snapshot behind.
pub fn write_snapshot(path: &Path, snapshot: &Snapshot) -> Result<(), StoreError> {
    let tmp = path.with_extension("json.tmp");
    let bytes = serde_json::to_vec(snapshot).expect("state always serializes");
    let mut file = File::create(&tmp).map_err(io_err(&tmp))?;
    file.write_all(&bytes).and_then(|_| file.sync_all()).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use panvas_core::{Command, Platform, PlatformConfig};

    fn records(n: usize) -> Vec<EventRecord> {
        let p = Platform::new(PlatformConfig::default()).unwrap();
        let mut out = vec![EventRecord::genesis(&p)];
        for i in 1..n {
            out.push(EventRecord::new(i as u64, Command::AdvanceClock { ticks: 1 }, i as u64 - 1, vec![]));
        }
        out
    }

    fn encode(records: &[EventRecord]) -> Vec<u8> {
        records.iter().flat_map(|r| {
            let mut l = serde_json::to_vec(r).unwrap();
            l.push(b'\n');
            l
        })
        .collect()
    }

    #[test]
    fn complete_log_parses() {
        let rs = records(4);
        let loaded = parse_log(&encode(&rs)).unwrap();
        assert_eq!(loaded.records, rs);
        assert_eq!(loaded.truncated_bytes, 0);
        assert_eq!(loaded.valid_len(), encode(&rs).len());
        assert_eq!(loaded.ends[0], encode(&rs[..1]).len());
    }

    #[test]
    fn interrupted_tail_is_dropped() {
        let rs = records(3);
        let mut bytes = encode(&rs);
        bytes.extend_from_slice(b"{\"sequence\":3,\"ki");
        let loaded = parse_log(&bytes).unwrap();
        assert_eq!(loaded.records.len(), 3);
        assert_eq!(loaded.truncated_bytes, 17);
    }

    #[test]
    fn garbage_in_the_middle_is_corruption() {
        let rs = records(3);
        let mut bytes = encode(&rs[..2]);
        bytes.extend_from_slice(b"not json\n");
        bytes.extend_from_slice(&encode(&rs[2..]));
        let err = parse_log(&bytes).unwrap_err();
        assert!(matches!(err, StoreError::Corrupt { line: 3, last_valid: Some(1), .. }), "{err}");
        assert_eq!(err.code(), "CORRUPT_LOG");
    }

    #[test]
    fn out_of_order_sequence_is_corruption() {
        let mut rs = records(3);
        rs[2].sequence = 5;
        assert!(matches!(parse_log(&encode(&rs)), Err(StoreError::Corrupt { line: 3, .. })));
    }

    #[test]
    fn poisoned_log_refuses_appends() {
        let dir = std::env::temp_dir().join(format!("panvas-store-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(LOG_FILE);
        let rs = records(2);
        let mut log = EventLog::open(&path, &[], false).unwrap();
        log.append(&rs[0]).unwrap();
        assert_eq!(log.digest(), digest(&encode(&rs[..1])));
        log.poison();
        assert!(matches!(log.append(&rs[1]), Err(StoreError::Poisoned)));
        assert_eq!(read_log(&path).unwrap().records.len(), 1);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
