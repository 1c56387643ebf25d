//! The running service: platform state, the log writer and the idempotency
//! cache, kept consistent under one lock.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hmac::{Hmac, KeyInit, Mac};
use panvas_core::ids::UserId;
use panvas_core::platform::Applied;
use panvas_core::{Command, EventRecord, Outcome, Platform};
use rand::RngExt;
use serde_json::{json, Value};
use sha2::Sha256;
use thiserror::Error;
use tracing::{info, warn};

use crate::error::ApiError;
use crate::settings::ServiceConfig;
use crate::store::{self, EventLog, IdempotentReply, Snapshot, StoreError};

pub const KEY_FILE: &str = "pseudonym.key";
pub const ADMIN_TOKEN_FILE: &str = "admin.token";

#[derive(Debug, Error)]
pub enum StartupError {
    #[error(transparent)]
    Config(#[from] panvas_core::config::ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("event {sequence} cannot be replayed: {detail} (last valid sequence: {})", .sequence.saturating_sub(1))]
    Replay { sequence: u64, detail: String },
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
}

impl StartupError {
    pub fn code(&self) -> &'static str {
        match self {
            StartupError::Config(e) => e.code(),
            StartupError::Store(e) => e.code(),
            StartupError::Replay { .. } => "CORRUPT_LOG",
            StartupError::Bind { .. } => "BIND_FAILURE",
        }
    }
}

/// How startup went, for the operator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recovery {
    pub last_sequence: u64,
    pub truncated_bytes: usize,
    pub from_snapshot: Option<u64>,
}

/// A successfully applied command as returned to the client.
#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub sequence: u64,
    pub body: Value,
    pub replayed: bool,
}

pub struct Service {
    platform: Platform,
    log: EventLog,
    idempotency: BTreeMap<String, IdempotentReply>,
    key: Vec<u8>,
    admin_token: String,
    data_dir: PathBuf,
    snapshot_every: u64,
    recovery: Recovery,
}

impl std::fmt::Debug for Service {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Service").field("events", &self.platform.state().events).finish_non_exhaustive()
    }
}

fn read_or_create(path: &Path, make: impl FnOnce() -> String) -> Result<String, StoreError> {
    let io = |source| StoreError::Io { path: path.to_path_buf(), source };
    match std::fs::read_to_string(path) {
        Ok(s) => Ok(s.trim().to_string()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            let value = make();
            std::fs::write(path, format!("{value}\n")).map_err(io)?;
            #[cfg(unix)]
            {
                use std::os::unix::fs::PermissionsExt;
                std::fs::set_permissions(path, std::fs::Permissions::from_mode(0o600)).map_err(io)?;
            }
            Ok(value)
        }
        Err(e) => Err(io(e)),
    }
}

fn random_hex() -> String {
    let bytes: [u8; 32] = rand::rng().random();
    hex::encode(bytes)
}

impl Service {
    /// Opens the data directory, recovers the log and rebuilds state.
    pub fn open(config: &ServiceConfig) -> Result<Self, StartupError> {
        let dir = &config.server.data_dir;
        std::fs::create_dir_all(dir).map_err(|source| StoreError::Io { path: dir.clone(), source })?;
        let mut base = config.platform.clone();
        if base.identity.pseudonym_key.is_empty() {
            base.identity.pseudonym_key = read_or_create(&dir.join(KEY_FILE), random_hex)?;
            base.validate()?;
        }
        let admin_token = match &config.server.admin_token {
            Some(t) => t.clone(),
            None => read_or_create(&dir.join(ADMIN_TOKEN_FILE), random_hex)?,
        };
        let key = hex::decode(&base.identity.pseudonym_key).expect("validated as hex");

        let log_path = dir.join(store::LOG_FILE);
        let bytes = store::read_log_bytes(&log_path)?;
        let loaded = store::parse_log(&bytes)?;
        if loaded.truncated_bytes > 0 {
            warn!(bytes = loaded.truncated_bytes, "discarding an incomplete final log record");
        }
        let valid = &bytes[..loaded.valid_len()];
        let mut log = EventLog::open(&log_path, valid, config.server.fsync)?;

        let mut idempotency = BTreeMap::new();
        let mut from_snapshot = None;
        let platform = if loaded.records.is_empty() {
            let platform = Platform::new(base.clone())?;
            log.append(&EventRecord::genesis(&platform))?;
            platform
        } else {
            let genesis = &loaded.records[0];
            let mut platform = Platform::from_genesis(genesis, &base)
                .map_err(|e| StartupError::Replay { sequence: 0, detail: e.to_string() })?;
            if platform.config() != &base {
                warn!("configured platform policy differs from the logged genesis; the log wins");
            }
            let mut start = 1;
            if let Some(snap) = store::read_snapshot(&dir.join(store::SNAPSHOT_FILE))? {
                let covered = loaded.ends.get(snap.sequence as usize).map(|&end| store::digest(&bytes[..end]));
                if covered.as_deref() == Some(snap.log_digest.as_str()) && snap.state.events == snap.sequence {
                    platform = Platform::from_state(platform.config().clone(), snap.state)?;
                    idempotency = snap.idempotency;
                    start = snap.sequence as usize + 1;
                    from_snapshot = Some(snap.sequence);
                } else {
                    warn!(sequence = snap.sequence, "snapshot does not match the log; replaying from genesis");
                }
            }
            for record in &loaded.records[start..] {
                let applied = platform.replay_record(record).map_err(|e| StartupError::Replay {
                    sequence: e.sequence().unwrap_or(record.sequence),
                    detail: e.to_string(),
                })?;
                if let Some(k) = &record.idempotency_key {
                    let response = respond(&key, record.sequence, &applied.outcome);
                    let reply = IdempotentReply { sequence: record.sequence, request: record.payload.clone(), response };
                    idempotency.insert(k.clone(), reply);
                }
            }
            platform
        };
        let recovery = Recovery {
            last_sequence: platform.state().events,
            truncated_bytes: loaded.truncated_bytes,
            from_snapshot,
        };
        info!(last_sequence = recovery.last_sequence, "event log recovered");
        Ok(Self {
            platform,
            log,
            idempotency,
            key,
            admin_token,
            data_dir: dir.clone(),
            snapshot_every: config.server.snapshot_every,
            recovery,
        })
    }

    pub fn platform(&self) -> &Platform {
        &self.platform
    }

    pub fn recovery(&self) -> &Recovery {
        &self.recovery
    }

    pub fn admin_token(&self) -> &str {
        &self.admin_token
    }

    pub fn is_poisoned(&self) -> bool {
        self.log.is_poisoned()
    }

    pub fn user_token(&self, user: UserId) -> String {
        user_token(&self.key, user)
    }

    /// Maps a bearer token back to its user. Tokens are `<id>.<mac>`.
    pub fn authenticate(&self, token: &str) -> Option<UserId> {
        let (id, mac) = token.split_once('.')?;
        let user = UserId(id.parse().ok()?);
        let mac = hex::decode(mac).ok()?;
        token_mac(&self.key, user).verify_slice(&mac).ok()?;
        self.platform.state().identity.user(user).ok()?;
        Some(user)
    }

    /// Validates, applies, appends and only then acknowledges. A request
    /// repeating an idempotency key gets the original reply.
    pub fn submit(&mut self, command: Command, idempotency_key: Option<String>) -> Result<Reply, ApiError> {
        if self.log.is_poisoned() {
            return Err(StoreError::Poisoned.into());
        }
        if let Some(k) = &idempotency_key {
            if let Some(cached) = self.idempotency.get(k) {
                if cached.request != command {
                    return Err(ApiError::new(
                        "IDEMPOTENCY_CONFLICT",
                        format!("idempotency key {k} was already used for a different request"),
                    ));
                }
                return Ok(Reply { sequence: cached.sequence, body: cached.response.clone(), replayed: true });
            }
        }
        let occurred_at = self.platform.now();
        let Applied { outcome, effects } = self.platform.execute(&command)?;
        let sequence = self.platform.state().events;
        let mut record = EventRecord::new(sequence, command, occurred_at, effects);
        record.idempotency_key = idempotency_key.clone();
        self.log.append(&record)?;
        let body = respond(&self.key, sequence, &outcome);
        if let Some(k) = idempotency_key {
            let reply = IdempotentReply { sequence, request: record.payload, response: body.clone() };
            self.idempotency.insert(k, reply);
        }
        if sequence % self.snapshot_every == 0 {
            self.snapshot();
        }
        Ok(Reply { sequence, body, replayed: false })
    }

    /// Best effort: the log stays authoritative if a snapshot cannot be written.
    pub fn snapshot(&self) {
        let snap = Snapshot {
            sequence: self.platform.state().events,
            log_digest: self.log.digest(),
            state: self.platform.state().clone(),
            idempotency: self.idempotency.clone(),
        };
        if let Err(e) = store::write_snapshot(&self.data_dir.join(store::SNAPSHOT_FILE), &snap) {
            warn!(error = %e, "snapshot failed");
        }
    }
}

fn token_mac(key: &[u8], user: UserId) -> Hmac<Sha256> {
    let mut mac = <Hmac<Sha256> as KeyInit>::new_from_slice(key).expect("hmac accepts any key length");
    mac.update(b"bearer:");
    mac.update(&user.0.to_be_bytes());
    mac
}

pub fn user_token(key: &[u8], user: UserId) -> String {
    format!("{}.{}", user.0, hex::encode(token_mac(key, user).finalize().into_bytes()))
}

/// Response body for an applied command. Derived only from the outcome so
/// cached replies can be rebuilt from the log.
pub fn respond(key: &[u8], sequence: u64, outcome: &Outcome) -> Value {
    let mut body = serde_json::to_value(outcome).expect("outcomes always serialize");
    let obj = body.as_object_mut().expect("outcomes are tagged objects");
    obj.insert("sequence".into(), json!(sequence));
    if let Outcome::User { user, .. } = outcome {
        obj.insert("token".into(), json!(user_token(key, user.user_id)));
    }
    if let Some(code) = outcome.soft_code() {
        obj.insert("code".into(), json!(code));
        let message = match code {
            "NO_BIDS" => "no eligible bids; the bounty expired and its escrow was refunded",
            _ => "the assignment deadline has passed; the escrow was refunded",
        };
        obj.insert("message".into(), json!(message));
    }
    body
}
