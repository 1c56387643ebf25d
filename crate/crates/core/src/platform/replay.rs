//! Event records and log replay.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Applied, Command, Platform};
use crate::config::PlatformConfig;
use crate::ids::Tick;
use crate::ledger::Transaction;

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub sequence: u64,
    pub kind: String,
    pub payload: Command,
    pub occurred_at: Tick,
    /// Ledger postings the command caused, for offline auditing.
    #[serde(default)]
    pub effects: Vec<Transaction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
}

impl EventRecord {
    pub fn genesis(platform: &Platform) -> Self {
        Self {
            sequence: 0,
            kind: "GENESIS".into(),
            payload: platform.genesis_command(),
            occurred_at: 0,
            effects: Vec::new(),
            idempotency_key: None,
        }
    }

    pub fn new(sequence: u64, command: Command, occurred_at: Tick, effects: Vec<Transaction>) -> Self {
        Self {
            sequence,
            kind: command.kind().to_string(),
            payload: command,
            occurred_at,
            effects,
            idempotency_key: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("log does not start with a genesis record")]
    MissingGenesis,
    #[error("expected sequence {expected}, found {found}")]
    SequenceGap { expected: u64, found: u64 },
    #[error("genesis config is invalid: {0}")]
    Config(String),
    #[error("event {sequence} was rejected on replay: {code}: {message}")]
    Rejected { sequence: u64, code: String, message: String },
    #[error("event {sequence} diverged on replay: {detail}")]
    Diverged { sequence: u64, detail: String },
}

impl ReplayError {
    pub fn code(&self) -> &'static str {
        "CORRUPT_LOG"
    }

    pub fn sequence(&self) -> Option<u64> {
        match self {
            ReplayError::MissingGenesis | ReplayError::Config(_) => Some(0),
            ReplayError::SequenceGap { found, .. } => Some(*found),
            ReplayError::Rejected { sequence, .. } | ReplayError::Diverged { sequence, .. } => Some(*sequence),
        }
    }
}

impl Platform {
    /// Builds the platform a genesis record describes. The pseudonym key is
    /// never logged and is taken from `base`.
    pub fn from_genesis(record: &EventRecord, base: &PlatformConfig) -> Result<Self, ReplayError> {
        let Command::Genesis { config } = &record.payload else {
            return Err(ReplayError::MissingGenesis);
        };
        if record.sequence != 0 {
            return Err(ReplayError::SequenceGap { expected: 0, found: record.sequence });
        }
        let mut config = (**config).clone();
        config.identity.pseudonym_key = base.identity.pseudonym_key.clone();
        Platform::new(config).map_err(|e| ReplayError::Config(e.to_string()))
    }

    /// Re-applies one logged command and checks it reproduces what was
    /// recorded.
    pub fn replay_record(&mut self, record: &EventRecord) -> Result<Applied, ReplayError> {
        let sequence = record.sequence;
        let expected = self.state.events + 1;
        if sequence != expected {
            return Err(ReplayError::SequenceGap { expected, found: sequence });
        }
        if record.occurred_at != self.state.now {
            return Err(ReplayError::Diverged {
                sequence,
                detail: format!("recorded at tick {} but the clock reads {}", record.occurred_at, self.state.now),
            });
        }
        let applied = self.execute(&record.payload).map_err(|e| ReplayError::Rejected {
            sequence,
            code: e.code().to_string(),
            message: e.to_string(),
        })?;
        if applied.effects != record.effects {
            return Err(ReplayError::Diverged {
                sequence,
                detail: "ledger postings differ from the recorded effects".into(),
            });
        }
        Ok(applied)
    }
}

/// Rebuilds a platform from a log. An empty log yields a fresh platform
/// built from `base`.
pub fn replay<'a>(
    records: impl IntoIterator<Item = &'a EventRecord>,
    base: &PlatformConfig,
) -> Result<Platform, ReplayError> {
    let mut records = records.into_iter();
    let Some(first) = records.next() else {
        return Platform::new(base.clone()).map_err(|e| ReplayError::Config(e.to_string()));
    };
    let mut platform = Platform::from_genesis(first, base)?;
    for r in records {
        platform.replay_record(r)?;
    }
    Ok(platform)
}
