//! Users, participant roles, reviewer licensing and incognito pseudonyms.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use hmac::{Hmac, KeyInit, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

use crate::ids::{PaperId, Tick, UserId};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    #[default]
    Freeman,
    Producer,
    Consumer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub user_id: UserId,
    pub display_name: String,
    pub role: Role,
    pub expertise: BTreeSet<String>,
    /// Community-assessed review quality in `[0, 1]`.
    pub reputation: f64,
    pub moderator: bool,
    pub registered_at: Tick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LicenseStatus {
    Active,
    Revoked,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewerLicense {
    pub user_id: UserId,
    pub fields_of_expertise: BTreeSet<String>,
    pub exam_score: u8,
    pub granted_at: Tick,
    pub status: LicenseStatus,
}

/// Opaque per-(user, paper) handle.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pseudonym(String);

impl Pseudonym {
    const PREFIX: &'static str = "anon-";

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn parse(handle: &str) -> Option<Self> {
        let hex_part = handle.strip_prefix(Self::PREFIX)?;
        (hex_part.len() == 32 && hex_part.bytes().all(|b| b.is_ascii_hexdigit()))
            .then(|| Pseudonym(handle.to_string()))
    }
}

impl fmt::Display for Pseudonym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Keyed hash of `(user, paper)` truncated to 128 bits.
///
/// Deterministic for a fixed key; without the key, handles for the same user
/// on different papers cannot be linked.
pub fn derive_pseudonym(server_key: &[u8], user: UserId, paper: PaperId) -> Pseudonym {
    let mut mac = <Hmac<Sha256> as KeyInit>::new_from_slice(server_key)
        .expect("HMAC accepts keys of any length");
    mac.update(b"panvas/pseudonym/v1");
    mac.update(&user.0.to_be_bytes());
    mac.update(&paper.0.to_be_bytes());
    let digest = mac.finalize().into_bytes();
    Pseudonym(format!("{}{}", Pseudonym::PREFIX, hex::encode(&digest[..16])))
}

/// A participant as shown to others: their user id, or a per-paper pseudonym.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Handle {
    User(UserId),
    Pseudonym(Pseudonym),
}

impl fmt::Display for Handle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Handle::User(id) => write!(f, "{id}"),
            Handle::Pseudonym(p) => write!(f, "{p}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdentityPolicy {
    pub pass_threshold: u8,
    pub ema_alpha: f64,
    pub reputation_prior: f64,
    /// Hex-encoded pseudonym key. Never written to the event log.
    #[serde(skip_serializing)]
    pub pseudonym_key: String,
}

impl Default for IdentityPolicy {
    fn default() -> Self {
        Self {
            pass_threshold: 70,
            ema_alpha: 0.2,
            reputation_prior: 0.5,
            pseudonym_key: String::new(),
        }
    }
}

impl IdentityPolicy {
    pub fn validate(&self, problems: &mut Vec<String>) {
        if self.pass_threshold > 100 {
            problems.push("identity.pass_threshold must be within 0..=100".into());
        }
        if !(self.ema_alpha > 0.0 && self.ema_alpha <= 1.0) {
            problems.push("identity.ema_alpha must be within (0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.reputation_prior) {
            problems.push("identity.reputation_prior must be within [0, 1]".into());
        }
        if !self.pseudonym_key.is_empty() && hex::decode(&self.pseudonym_key).is_err() {
            problems.push("identity.pseudonym_key must be hex".into());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdentityError {
    #[error("display name must be non-empty")]
    EmptyDisplayName,
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("exam score {score} is below the pass threshold {threshold}")]
    ScoreBelowThreshold { score: u8, threshold: u8 },
    #[error("exam score {0} is outside 0..=100")]
    InvalidScore(u8),
    #[error("user {0} already holds an active license")]
    LicenseExists(UserId),
    #[error("user {0} holds no active license")]
    NoActiveLicense(UserId),
    #[error("meta-review quality {0} is outside 1..=5")]
    OutOfRange(u8),
    #[error("unknown pseudonym {0}")]
    UnknownPseudonym(String),
    #[error("user {0} is not a moderator")]
    NotModerator(UserId),
}

impl IdentityError {
    pub fn code(&self) -> &'static str {
        match self {
            IdentityError::EmptyDisplayName => "VALIDATION_ERROR",
            IdentityError::UnknownUser(_) => "UNKNOWN_USER",
            IdentityError::ScoreBelowThreshold { .. } => "SCORE_BELOW_THRESHOLD",
            IdentityError::InvalidScore(_) => "OUT_OF_RANGE",
            IdentityError::LicenseExists(_) => "LICENSE_EXISTS",
            IdentityError::NoActiveLicense(_) => "NO_ACTIVE_LICENSE",
            IdentityError::OutOfRange(_) => "OUT_OF_RANGE",
            IdentityError::UnknownPseudonym(_) => "UNKNOWN_PSEUDONYM",
            IdentityError::NotModerator(_) => "NOT_MODERATOR",
        }
    }
}

type Result<T, E = IdentityError> = std::result::Result<T, E>;

/// Audit trail entry for a moderator lifting someone's incognito handle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnmaskRecord {
    pub pseudonym: Pseudonym,
    pub user: UserId,
    pub paper: PaperId,
    pub moderator: UserId,
    pub at: Tick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identity {
    policy: IdentityPolicy,
    users: Vec<User>,
    licenses: Vec<ReviewerLicense>,
    active_license: BTreeMap<UserId, usize>,
    /// Server-side reverse map, only consulted by audited unmasking.
    pseudonyms: BTreeMap<Pseudonym, (UserId, PaperId)>,
    unmask_audit: Vec<UnmaskRecord>,
}

impl Identity {
    pub fn new(policy: IdentityPolicy) -> Self {
        Self {
            policy,
            users: Vec::new(),
            licenses: Vec::new(),
            active_license: BTreeMap::new(),
            pseudonyms: BTreeMap::new(),
            unmask_audit: Vec::new(),
        }
    }

    pub fn policy(&self) -> &IdentityPolicy {
        &self.policy
    }

    pub(crate) fn set_pseudonym_key(&mut self, key: String) {
        self.policy.pseudonym_key = key;
    }

    pub fn register_user(
        &mut self,
        display_name: &str,
        expertise: impl IntoIterator<Item = String>,
        at: Tick,
    ) -> Result<&User> {
        let display_name = display_name.trim();
        if display_name.is_empty() {
            return Err(IdentityError::EmptyDisplayName);
        }
        let user_id = UserId::from_index(self.users.len());
        self.users.push(User {
            user_id,
            display_name: display_name.to_string(),
            role: Role::Freeman,
            expertise: normalize_topics(expertise),
            reputation: self.policy.reputation_prior,
            moderator: false,
            registered_at: at,
        });
        Ok(&self.users[user_id.index()])
    }

    pub fn user(&self, id: UserId) -> Result<&User> {
        self.users.get(id.index()).ok_or(IdentityError::UnknownUser(id))
    }

    fn user_mut(&mut self, id: UserId) -> Result<&mut User> {
        self.users.get_mut(id.index()).ok_or(IdentityError::UnknownUser(id))
    }

    pub fn users(&self) -> &[User] {
        &self.users
    }

    /// Replaces the user's role. Settlement reads whatever role the user holds
    /// when the epoch closes.
    pub fn assign_role(&mut self, id: UserId, role: Role) -> Result<&User> {
        let user = self.user_mut(id)?;
        user.role = role;
        Ok(user)
    }

    pub fn set_moderator(&mut self, id: UserId, moderator: bool) -> Result<&User> {
        let user = self.user_mut(id)?;
        user.moderator = moderator;
        Ok(user)
    }

    pub fn require_moderator(&self, id: UserId) -> Result<()> {
        if self.user(id)?.moderator {
            Ok(())
        } else {
            Err(IdentityError::NotModerator(id))
        }
    }

    pub fn grant_license(
        &mut self,
        id: UserId,
        fields: impl IntoIterator<Item = String>,
        exam_score: u8,
        at: Tick,
    ) -> Result<&ReviewerLicense> {
        self.user(id)?;
        if exam_score > 100 {
            return Err(IdentityError::InvalidScore(exam_score));
        }
        if exam_score < self.policy.pass_threshold {
            return Err(IdentityError::ScoreBelowThreshold {
                score: exam_score,
                threshold: self.policy.pass_threshold,
            });
        }
        if self.active_license.contains_key(&id) {
            return Err(IdentityError::LicenseExists(id));
        }
        let index = self.licenses.len();
        self.licenses.push(ReviewerLicense {
            user_id: id,
            fields_of_expertise: normalize_topics(fields),
            exam_score,
            granted_at: at,
            status: LicenseStatus::Active,
        });
        self.active_license.insert(id, index);
        Ok(&self.licenses[index])
    }

    pub fn revoke_license(&mut self, id: UserId) -> Result<&ReviewerLicense> {
        self.user(id)?;
        let index = self
            .active_license
            .remove(&id)
            .ok_or(IdentityError::NoActiveLicense(id))?;
        self.licenses[index].status = LicenseStatus::Revoked;
        Ok(&self.licenses[index])
    }

    pub fn active_license(&self, id: UserId) -> Option<&ReviewerLicense> {
        self.active_license.get(&id).map(|&i| &self.licenses[i])
    }

    /// Every license ever granted to `id`, oldest first.
    pub fn license_history(&self, id: UserId) -> impl Iterator<Item = &ReviewerLicense> {
        self.licenses.iter().filter(move |l| l.user_id == id)
    }

    fn key_bytes(&self) -> Vec<u8> {
        hex::decode(&self.policy.pseudonym_key).unwrap_or_default()
    }

    /// The user's handle on `paper`, without recording it.
    pub fn peek_pseudonym(&self, user: UserId, paper: PaperId) -> Result<Pseudonym> {
        self.user(user)?;
        Ok(derive_pseudonym(&self.key_bytes(), user, paper))
    }

    pub fn peek_handle(&self, user: UserId, paper: PaperId, incognito: bool) -> Result<Handle> {
        if incognito {
            self.peek_pseudonym(user, paper).map(Handle::Pseudonym)
        } else {
            self.user(user)?;
            Ok(Handle::User(user))
        }
    }

    /// The user's handle on `paper` and records the server-side mapping.
    pub fn pseudonym_for(&mut self, user: UserId, paper: PaperId) -> Result<Pseudonym> {
        self.user(user)?;
        let pseudonym = derive_pseudonym(&self.key_bytes(), user, paper);
        self.pseudonyms.entry(pseudonym.clone()).or_insert((user, paper));
        Ok(pseudonym)
    }

    pub fn handle_for(&mut self, user: UserId, paper: PaperId, incognito: bool) -> Result<Handle> {
        if incognito {
            self.pseudonym_for(user, paper).map(Handle::Pseudonym)
        } else {
            self.user(user)?;
            Ok(Handle::User(user))
        }
    }

    /// Reveals who stands behind a pseudonym. Only moderators may do this and
    /// every use is audited.
    pub fn unmask(&mut self, pseudonym: &str, moderator: UserId, at: Tick) -> Result<UnmaskRecord> {
        self.require_moderator(moderator)?;
        let key = Pseudonym::parse(pseudonym)
            .ok_or_else(|| IdentityError::UnknownPseudonym(pseudonym.to_string()))?;
        let &(user, paper) = self
            .pseudonyms
            .get(&key)
            .ok_or_else(|| IdentityError::UnknownPseudonym(pseudonym.to_string()))?;
        let record = UnmaskRecord { pseudonym: key, user, paper, moderator, at };
        self.unmask_audit.push(record.clone());
        Ok(record)
    }

    pub fn unmask_audit(&self) -> &[UnmaskRecord] {
        &self.unmask_audit
    }

    /// Folds a meta-review quality score (1 to 5) into the user's reputation
    /// with an exponential moving average.
    pub fn update_reputation(&mut self, id: UserId, quality: u8) -> Result<&User> {
        if !(1..=5).contains(&quality) {
            return Err(IdentityError::OutOfRange(quality));
        }
        let alpha = self.policy.ema_alpha;
        let user = self.user_mut(id)?;
        user.reputation = ema(user.reputation, normalize_quality(quality), alpha);
        Ok(user)
    }
}

/// Maps a 1..=5 quality score onto `[0, 1]`.
pub fn normalize_quality(quality: u8) -> f64 {
    (f64::from(quality) - 1.0) / 4.0
}

pub fn ema(current: f64, observation: f64, alpha: f64) -> f64 {
    (alpha * observation + (1.0 - alpha) * current).clamp(0.0, 1.0)
}

/// Lowercased, trimmed, deduplicated topic keywords.
pub fn normalize_topics(topics: impl IntoIterator<Item = String>) -> BTreeSet<String> {
    topics
        .into_iter()
        .map(|t| t.trim().to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn registry() -> Identity {
        Identity::new(IdentityPolicy {
            pseudonym_key: "00112233445566778899aabbccddeeff".into(),
            ..IdentityPolicy::default()
        })
    }

    fn topics(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn registration_defaults_to_freeman_at_prior() {
        let mut ids = registry();
        let user = ids.register_user("ada", topics(&["parsing"]), 0).unwrap();
        assert_eq!(user.role, Role::Freeman);
        assert_eq!(user.reputation, 0.5);
        assert!(user.expertise.contains("parsing"));
    }

    #[test]
    fn reputation_survives_json_exactly() {
        let mut user = registry().register_user("ada", vec![], 0).unwrap().clone();
        // Parses back as 0.42 without exact float round-tripping.
        user.reputation = 0.42000000000000004;
        let back: User = serde_json::from_str(&serde_json::to_string(&user).unwrap()).unwrap();
        assert_eq!(back.reputation.to_bits(), user.reputation.to_bits());
    }

    #[test]
    fn empty_display_name_is_rejected() {
        let mut ids = registry();
        assert_eq!(ids.register_user("", vec![], 0).unwrap_err(), IdentityError::EmptyDisplayName);
        assert_eq!(ids.register_user("   ", vec![], 0).unwrap_err().code(), "VALIDATION_ERROR");
    }

    #[test]
    fn registrations_get_distinct_ids() {
        let mut ids = registry();
        let a = ids.register_user("a", vec![], 0).unwrap().user_id;
        let b = ids.register_user("b", vec![], 0).unwrap().user_id;
        assert_ne!(a, b);
    }

    #[test]
    fn role_assignment() {
        let mut ids = registry();
        let u = ids.register_user("a", vec![], 0).unwrap().user_id;
        assert_eq!(ids.assign_role(u, Role::Producer).unwrap().role, Role::Producer);
        assert_eq!(ids.assign_role(u, Role::Producer).unwrap().role, Role::Producer);
        assert_eq!(
            ids.assign_role(UserId(99), Role::Consumer).unwrap_err().code(),
            "UNKNOWN_USER"
        );
    }

    #[test]
    fn license_state_machine() {
        let mut ids = registry();
        let u = ids.register_user("rev", vec![], 0).unwrap().user_id;
        assert_eq!(ids.grant_license(u, topics(&["ml"]), 85, 1).unwrap().status, LicenseStatus::Active);
        assert_eq!(
            ids.grant_license(u, topics(&["ml"]), 90, 2).unwrap_err(),
            IdentityError::LicenseExists(u)
        );
        ids.revoke_license(u).unwrap();
        assert!(ids.active_license(u).is_none());
        ids.grant_license(u, topics(&["ml"]), 71, 3).unwrap();
        let history: Vec<_> = ids.license_history(u).map(|l| l.status).collect();
        assert_eq!(history, vec![LicenseStatus::Revoked, LicenseStatus::Active]);
    }

    #[test]
    fn license_threshold_boundary() {
        let mut ids = registry();
        let u = ids.register_user("rev", vec![], 0).unwrap().user_id;
        assert_eq!(ids.grant_license(u, vec![], 60, 0).unwrap_err().code(), "SCORE_BELOW_THRESHOLD");
        assert_eq!(ids.grant_license(u, vec![], 69, 0).unwrap_err().code(), "SCORE_BELOW_THRESHOLD");
        ids.grant_license(u, vec![], 70, 0).unwrap();
    }

    #[test]
    fn reputation_ema_arithmetic() {
        let mut ids = registry();
        let u = ids.register_user("rev", vec![], 0).unwrap().user_id;
        let rep = ids.update_reputation(u, 5).unwrap().reputation;
        assert!((rep - 0.6).abs() < 1e-12);
        assert_eq!(ids.update_reputation(u, 0).unwrap_err(), IdentityError::OutOfRange(0));
        assert_eq!(ids.update_reputation(u, 6).unwrap_err().code(), "OUT_OF_RANGE");
    }

    #[test]
    fn reputation_converges_to_repeated_observation() {
        let mut ids = registry();
        let u = ids.register_user("rev", vec![], 0).unwrap().user_id;
        ids.update_reputation(u, 5).unwrap();
        for _ in 0..500 {
            ids.update_reputation(u, 3).unwrap();
        }
        assert!((ids.user(u).unwrap().reputation - 0.5).abs() < 1e-9);
    }

    #[test]
    fn pseudonyms_are_per_paper() {
        let key = b"secret";
        let a = derive_pseudonym(key, UserId(1), PaperId(1));
        assert_eq!(a, derive_pseudonym(key, UserId(1), PaperId(1)));
        assert_ne!(a, derive_pseudonym(key, UserId(1), PaperId(2)));
        assert_ne!(a, derive_pseudonym(b"other", UserId(1), PaperId(1)));
        assert!(Pseudonym::parse(a.as_str()).is_some());
        assert_eq!(a.as_str().len(), "anon-".len() + 32);
    }

    #[test]
    fn unmasking_requires_moderator_and_is_audited() {
        let mut ids = registry();
        let u = ids.register_user("a", vec![], 0).unwrap().user_id;
        let m = ids.register_user("mod", vec![], 0).unwrap().user_id;
        let p = ids.pseudonym_for(u, PaperId(3)).unwrap();
        assert_eq!(ids.unmask(p.as_str(), m, 5).unwrap_err().code(), "NOT_MODERATOR");
        ids.set_moderator(m, true).unwrap();
        let record = ids.unmask(p.as_str(), m, 5).unwrap();
        assert_eq!((record.user, record.paper), (u, PaperId(3)));
        assert_eq!(ids.unmask_audit().len(), 1);
        assert_eq!(ids.unmask("anon-zz", m, 6).unwrap_err().code(), "UNKNOWN_PSEUDONYM");
    }

    proptest! {
        #[test]
        fn ema_stays_between_current_and_observation(current in 0.0f64..=1.0, q in 1u8..=5, alpha in 0.01f64..=1.0) {
            let obs = normalize_quality(q);
            let next = ema(current, obs, alpha);
            prop_assert!((0.0..=1.0).contains(&next));
            prop_assert!(next >= current.min(obs) - 1e-12 && next <= current.max(obs) + 1e-12);
        }

        #[test]
        fn pseudonym_determinism_and_scope(user in any::<u64>(), p1 in any::<u64>(), p2 in any::<u64>()) {
            prop_assume!(p1 != p2);
            let key = b"k";
            let a = derive_pseudonym(key, UserId(user), PaperId(p1));
            prop_assert_eq!(&a, &derive_pseudonym(key, UserId(user), PaperId(p1)));
            prop_assert_ne!(a, derive_pseudonym(key, UserId(user), PaperId(p2)));
        }
    }
}
