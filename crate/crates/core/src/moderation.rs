//! Rule-based moderation: flags, deterministic content scores and graduated
//! actions. Hidden content is tombstoned, never deleted.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{ActionId, CommentId, FlagId, ReviewId, Tick, UserId};

/// Anything that can be flagged. Written as `comment-<n>` or `review-<n>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ModerationTarget {
    Comment(CommentId),
    Review(ReviewId),
}

impl fmt::Display for ModerationTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModerationTarget::Comment(id) => write!(f, "{id}"),
            ModerationTarget::Review(id) => write!(f, "{id}"),
        }
    }
}

impl FromStr for ModerationTarget {
    type Err = ModerationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModerationError::InvalidTarget(s.to_string());
        let (kind, n) = s.rsplit_once('-').ok_or_else(bad)?;
        let n: u64 = n.parse().map_err(|_| bad())?;
        match kind {
            "comment" => Ok(ModerationTarget::Comment(CommentId(n))),
            "review" => Ok(ModerationTarget::Review(ReviewId(n))),
            _ => Err(bad()),
        }
    }
}

impl From<ModerationTarget> for String {
    fn from(t: ModerationTarget) -> Self {
        t.to_string()
    }
}

impl TryFrom<String> for ModerationTarget {
    type Error = ModerationError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FlagReason {
    Abuse,
    Spam,
    OffTopic,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flag {
    pub flag_id: FlagId,
    pub target: ModerationTarget,
    pub flagger: UserId,
    pub reason: FlagReason,
    pub flagged_at: Tick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreComponent {
    pub rule: String,
    pub hits: u64,
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModerationScore {
    pub target: ModerationTarget,
    pub score: f64,
    pub components: Vec<ScoreComponent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ActionKind {
    None,
    Warn,
    Hide,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decider {
    Rule,
    Moderator(UserId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModerationAction {
    pub action_id: ActionId,
    pub target: ModerationTarget,
    pub kind: ActionKind,
    pub previous: ActionKind,
    pub decided_at: Tick,
    pub decided_by: Decider,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuleWeights {
    pub banned_term: f64,
    pub flagger: f64,
    pub shouting: f64,
}

impl Default for RuleWeights {
    fn default() -> Self {
        Self { banned_term: 2.0, flagger: 1.0, shouting: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModerationPolicy {
    /// Banned terms, matched case-insensitively on whole words.
    pub lexicon: Vec<String>,
    /// UTF-8 file with one term per line, merged into `lexicon` at load time.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lexicon_path: Option<String>,
    pub warn_threshold: f64,
    pub hide_threshold: f64,
    pub weights: RuleWeights,
    pub shouting_ratio: f64,
    pub shouting_min_letters: usize,
}

impl Default for ModerationPolicy {
    fn default() -> Self {
        Self {
            lexicon: Vec::new(),
            lexicon_path: None,
            warn_threshold: 3.0,
            hide_threshold: 6.0,
            weights: RuleWeights::default(),
            shouting_ratio: 0.7,
            shouting_min_letters: 20,
        }
    }
}

impl ModerationPolicy {
    pub fn validate(&self, problems: &mut Vec<String>) {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.warn_threshold) || !ok(self.hide_threshold) {
            problems.push("moderation thresholds must be non-negative numbers".into());
        } else if self.warn_threshold > self.hide_threshold {
            problems.push("moderation.warn_threshold must not exceed hide_threshold".into());
        }
        let w = self.weights;
        if !(ok(w.banned_term) && ok(w.flagger) && ok(w.shouting)) {
            problems.push("moderation.weights must be non-negative numbers".into());
        }
        if !(0.0..=1.0).contains(&self.shouting_ratio) {
            problems.push("moderation.shouting_ratio must be within [0, 1]".into());
        }
        if self.lexicon.iter().any(|t| words(t).is_empty()) {
            problems.push("moderation.lexicon terms must contain a word".into());
        }
    }

    pub fn classify(&self, score: f64) -> ActionKind {
        if score >= self.hide_threshold {
            ActionKind::Hide
        } else if score >= self.warn_threshold {
            ActionKind::Warn
        } else {
            ActionKind::None
        }
    }
}

/// Lowercased alphanumeric words.
fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Scores a text. Implementations must be deterministic.
pub trait ContentScorer: Send + Sync {
    fn score(&self, text: &str, distinct_flaggers: usize) -> Vec<ScoreComponent>;
}

pub struct RuleScorer {
    terms: Vec<Vec<String>>,
    weights: RuleWeights,
    shouting_ratio: f64,
    shouting_min_letters: usize,
}

impl RuleScorer {
    pub fn new(policy: &ModerationPolicy) -> Self {
        let mut terms: Vec<Vec<String>> = policy.lexicon.iter().map(|t| words(t)).collect();
        terms.retain(|t| !t.is_empty());
        terms.sort();
        terms.dedup();
        Self {
            terms,
            weights: policy.weights,
            shouting_ratio: policy.shouting_ratio,
            shouting_min_letters: policy.shouting_min_letters,
        }
    }

    pub fn banned_hits(&self, text: &str) -> u64 {
        let tokens = words(text);
        self.terms
            .iter()
            .map(|term| tokens.windows(term.len()).filter(|w| *w == term.as_slice()).count() as u64)
            .sum()
    }

    pub fn is_shouting(&self, text: &str) -> bool {
        let letters = text.chars().filter(|c| c.is_alphabetic()).count();
        let upper = text.chars().filter(|c| c.is_uppercase()).count();
        letters >= self.shouting_min_letters && upper as f64 > self.shouting_ratio * letters as f64
    }
}

impl ContentScorer for RuleScorer {
    fn score(&self, text: &str, distinct_flaggers: usize) -> Vec<ScoreComponent> {
        let hits = self.banned_hits(text);
        let shouting = u64::from(self.is_shouting(text));
        vec![
            ScoreComponent {
                rule: "banned_terms".into(),
                hits,
                contribution: self.weights.banned_term * hits as f64,
            },
            ScoreComponent {
                rule: "flaggers".into(),
                hits: distinct_flaggers as u64,
                contribution: self.weights.flagger * distinct_flaggers as f64,
            },
            ScoreComponent {
                rule: "shouting".into(),
                hits: shouting,
                contribution: self.weights.shouting * shouting as f64,
            },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModerationError {
    #[error("{0:?} is not a moderation target")]
    InvalidTarget(String),
    #[error("unknown moderation target {0}")]
    UnknownTarget(ModerationTarget),
    #[error("user {flagger} already flagged {target}")]
    DuplicateFlag { flagger: UserId, target: ModerationTarget },
}

impl ModerationError {
    pub fn code(&self) -> &'static str {
        match self {
            ModerationError::InvalidTarget(_) | ModerationError::UnknownTarget(_) => "UNKNOWN_TARGET",
            ModerationError::DuplicateFlag { .. } => "DUPLICATE_FLAG",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moderation {
    policy: ModerationPolicy,
    flags: Vec<Flag>,
    actions: Vec<ModerationAction>,
    current: BTreeMap<ModerationTarget, ActionKind>,
    /// Targets a moderator has ruled on; rules no longer change them.
    overridden: BTreeSet<ModerationTarget>,
}

impl Moderation {
    pub fn new(policy: ModerationPolicy) -> Self {
        Self {
            policy,
            flags: Vec::new(),
            actions: Vec::new(),
            current: BTreeMap::new(),
            overridden: BTreeSet::new(),
        }
    }

    pub fn policy(&self) -> &ModerationPolicy {
        &self.policy
    }

    pub fn flags(&self) -> &[Flag] {
        &self.flags
    }

    pub fn flags_on(&self, target: ModerationTarget) -> impl Iterator<Item = &Flag> {
        self.flags.iter().filter(move |f| f.target == target)
    }

    pub fn actions(&self) -> &[ModerationAction] {
        &self.actions
    }

    pub fn actions_on(&self, target: ModerationTarget) -> impl Iterator<Item = &ModerationAction> {
        self.actions.iter().filter(move |a| a.target == target)
    }

    pub fn status(&self, target: ModerationTarget) -> ActionKind {
        self.current.get(&target).copied().unwrap_or(ActionKind::None)
    }

    pub fn is_overridden(&self, target: ModerationTarget) -> bool {
        self.overridden.contains(&target)
    }

    pub fn distinct_flaggers(&self, target: ModerationTarget) -> usize {
        self.flags_on(target).map(|f| f.flagger).collect::<BTreeSet<_>>().len()
    }

    /// Records a flag. The caller checks that the target exists.
    pub fn flag_content(
        &mut self,
        target: ModerationTarget,
        flagger: UserId,
        reason: FlagReason,
        now: Tick,
    ) -> Result<&Flag, ModerationError> {
        if self.flags_on(target).any(|f| f.flagger == flagger) {
            return Err(ModerationError::DuplicateFlag { flagger, target });
        }
        let flag_id = FlagId::from_index(self.flags.len());
        self.flags.push(Flag { flag_id, target, flagger, reason, flagged_at: now });
        Ok(&self.flags[flag_id.index()])
    }

    pub fn score_content(
        &self,
        target: ModerationTarget,
        text: &str,
        scorer: &dyn ContentScorer,
    ) -> ModerationScore {
        let components = scorer.score(text, self.distinct_flaggers(target));
        let score = components.iter().map(|c| c.contribution).sum();
        ModerationScore { target, score, components }
    }

    fn record(
        &mut self,
        target: ModerationTarget,
        kind: ActionKind,
        by: Decider,
        score: Option<f64>,
        now: Tick,
    ) -> &ModerationAction {
        let action_id = ActionId::from_index(self.actions.len());
        let previous = self.status(target);
        self.actions.push(ModerationAction {
            action_id,
            target,
            kind,
            previous,
            decided_at: now,
            decided_by: by,
            score,
        });
        self.current.insert(target, kind);
        &self.actions[action_id.index()]
    }

    /// Applies the threshold table. An action is recorded only when the
    /// outcome changes, and never on a target a moderator has ruled on.
    pub fn apply_policy(&mut self, score: &ModerationScore, now: Tick) -> Option<&ModerationAction> {
        let target = score.target;
        if self.overridden.contains(&target) {
            return None;
        }
        let kind = self.policy.classify(score.score);
        if kind == self.status(target) {
            return None;
        }
        Some(self.record(target, kind, Decider::Rule, Some(score.score), now))
    }

    /// Moderator ruling; always audited, and sticky against later rule runs.
    pub fn override_action(
        &mut self,
        target: ModerationTarget,
        kind: ActionKind,
        moderator: UserId,
        now: Tick,
    ) -> &ModerationAction {
        self.overridden.insert(target);
        self.record(target, kind, Decider::Moderator(moderator), None, now)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn policy(lexicon: &[&str]) -> ModerationPolicy {
        ModerationPolicy { lexicon: lexicon.iter().map(|s| s.to_string()).collect(), ..Default::default() }
    }

    const C: ModerationTarget = ModerationTarget::Comment(CommentId(0));

    #[test]
    fn target_round_trip() {
        assert_eq!("comment-3".parse::<ModerationTarget>().unwrap(), ModerationTarget::Comment(CommentId(3)));
        assert_eq!(ModerationTarget::Review(ReviewId(7)).to_string(), "review-7");
        assert_eq!("paper-1".parse::<ModerationTarget>().unwrap_err().code(), "UNKNOWN_TARGET");
        let json = serde_json::to_string(&C).unwrap();
        assert_eq!(json, "\"comment-0\"");
        assert_eq!(serde_json::from_str::<ModerationTarget>(&json).unwrap(), C);
    }

    #[test]
    fn scoring_examples() {
        let p = policy(&["idiot"]);
        let scorer = RuleScorer::new(&p);
        let mut m = Moderation::new(p);
        assert_eq!(m.score_content(C, "a fine argument", &scorer).score, 0.0);
        m.flag_content(C, UserId(1), FlagReason::Abuse, 0).unwrap();
        m.flag_content(C, UserId(2), FlagReason::Spam, 0).unwrap();
        let s = m.score_content(C, "only an Idiot would write this", &scorer);
        assert_eq!(s.score, 4.0);
        assert_eq!(s.components.iter().map(|c| c.contribution).sum::<f64>(), s.score);
        assert_eq!(m.flag_content(C, UserId(1), FlagReason::Other, 0).unwrap_err().code(), "DUPLICATE_FLAG");
    }

    #[test]
    fn whole_words_only() {
        let scorer = RuleScorer::new(&policy(&["ass", "bad faith"]));
        assert_eq!(scorer.banned_hits("a classic assessment"), 0);
        assert_eq!(scorer.banned_hits("ASS! ass, Ass"), 3);
        assert_eq!(scorer.banned_hits("argued in Bad   Faith"), 1);
    }

    #[test]
    fn shouting_needs_twenty_letters() {
        let scorer = RuleScorer::new(&policy(&[]));
        assert!(!scorer.is_shouting("GREAT WORK!!!"));
        assert!(scorer.is_shouting("THIS RESULT IS COMPLETELY WRONG"));
        assert!(!scorer.is_shouting("This result is completely wrong"));
    }

    #[test]
    fn thresholds() {
        let mut m = Moderation::new(policy(&[]));
        let at = |s| ModerationScore { target: C, score: s, components: vec![] };
        assert!(m.apply_policy(&at(2.9), 0).is_none());
        assert_eq!(m.apply_policy(&at(4.0), 0).unwrap().kind, ActionKind::Warn);
        assert_eq!(m.apply_policy(&at(6.0), 1).unwrap().kind, ActionKind::Hide);
        assert_eq!(m.status(C), ActionKind::Hide);
    }

    #[test]
    fn override_is_audited_and_sticky() {
        let mut m = Moderation::new(policy(&[]));
        let hide = ModerationScore { target: C, score: 7.0, components: vec![] };
        m.apply_policy(&hide, 0).unwrap();
        let a = m.override_action(C, ActionKind::None, UserId(9), 1).clone();
        assert_eq!((a.previous, a.kind, a.decided_by), (ActionKind::Hide, ActionKind::None, Decider::Moderator(UserId(9))));
        assert!(m.apply_policy(&hide, 2).is_none());
        assert_eq!(m.status(C), ActionKind::None);
        assert_eq!(m.actions_on(C).count(), 2);
    }

    proptest! {
        #[test]
        fn flag_order_does_not_matter(flaggers in prop::collection::vec(0u64..20, 0..20)) {
            let scorer = RuleScorer::new(&policy(&["spam"]));
            let mut a = Moderation::new(policy(&["spam"]));
            let mut b = Moderation::new(policy(&["spam"]));
            for &f in &flaggers {
                let _ = a.flag_content(C, UserId(f), FlagReason::Spam, 0);
            }
            for &f in flaggers.iter().rev() {
                let _ = b.flag_content(C, UserId(f), FlagReason::Spam, 0);
            }
            let text = "spam spam and more SPAM";
            prop_assert_eq!(a.score_content(C, text, &scorer), b.score_content(C, text, &scorer));
        }

        #[test]
        fn action_is_monotone_in_score(x in 0.0f64..20.0, y in 0.0f64..20.0) {
            let p = policy(&[]);
            let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
            prop_assert!(p.classify(lo) <= p.classify(hi));
        }
    }
}
