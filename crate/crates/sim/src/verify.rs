//! Offline log verification.

use std::path::Path;

use panvas_core::platform::{InvariantCheck, INVARIANTS};
use panvas_core::{EventRecord, Platform, PlatformConfig};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("CORRUPT_LOG: line {line} is not an event record: {detail}")]
    Corrupt { line: usize, detail: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub events: u64,
    pub checks: Vec<InvariantCheck>,
}

impl Verification {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Process exit code: 0 when every check passed, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        if self.passed() {
            0
        } else {
            1
        }
    }
}

pub fn parse_records(text: &str) -> Result<Vec<EventRecord>, VerifyError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| VerifyError::Corrupt { line: i + 1, detail: e.to_string() }))
        .collect()
}

fn all_passed() -> Vec<InvariantCheck> {
    INVARIANTS.iter().map(|n| InvariantCheck { name: (*n).into(), passed: true, detail: None }).collect()
}

/// Replays every record, checking recorded postings against the replay, then
/// re-checks the invariants on the final state. A record that does not
/// reproduce its postings fails conservation at that record's sequence.
pub fn verify_records(records: &[EventRecord]) -> Verification {
    let Some(first) = records.first() else {
        return Verification { events: 0, checks: all_passed() };
    };
    let base = PlatformConfig::default();
    let fail = |sequence: u64, detail: String, prefix: Option<&Platform>| {
        let mut checks = prefix.map_or_else(all_passed, Platform::check_invariants);
        for c in checks.iter_mut().filter(|c| c.name == "conservation") {
            c.passed = false;
            c.detail = Some(format!("event {sequence}: {detail}"));
        }
        Verification { events: sequence, checks }
    };
    let mut platform = match Platform::from_genesis(first, &base) {
        Ok(p) => p,
        Err(e) => return fail(0, e.to_string(), None),
    };
    for record in &records[1..] {
        if let Err(e) = platform.replay_record(record) {
            let sequence = e.sequence().unwrap_or(record.sequence);
            return fail(sequence, e.to_string(), Some(&platform));
        }
    }
    Verification { events: platform.state().events, checks: platform.check_invariants() }
}

pub fn verify_log(path: &Path) -> Result<Verification, VerifyError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| VerifyError::Io { path: path.display().to_string(), source })?;
    Ok(verify_records(&parse_records(&text)?))
}
