//! Community ratings, anchored discussion threads, reactions and the
//! merit-based visibility score.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identity::Handle;
use crate::ids::{AnchorId, BallotId, CommentId, FragmentId, PaperId, ThreadId, Tick, UserId};
use crate::scores::{Dimension, ScoreError, ScoreInput, Scores};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VisibilityWeights {
    pub ratings: f64,
    pub reviews: f64,
    pub commenters: f64,
}

impl Default for VisibilityWeights {
    fn default() -> Self {
        Self { ratings: 1.0, reviews: 0.5, commenters: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngagementPolicy {
    pub emoji: Vec<String>,
    pub visibility: VisibilityWeights,
}

impl Default for EngagementPolicy {
    fn default() -> Self {
        Self {
            emoji: ["👍", "👎", "🎉", "🤔", "❤️", "🚀"].map(String::from).to_vec(),
            visibility: VisibilityWeights::default(),
        }
    }
}

impl EngagementPolicy {
    pub fn validate(&self, problems: &mut Vec<String>) {
        if self.emoji.is_empty() {
            problems.push("engagement.emoji must list at least one emoji".into());
        }
        let unique: BTreeSet<&String> = self.emoji.iter().collect();
        if unique.len() != self.emoji.len() {
            problems.push("engagement.emoji contains duplicates".into());
        }
        if self.emoji.iter().any(|e| e.trim().is_empty()) {
            problems.push("engagement.emoji entries must be non-empty".into());
        }
        let w = self.visibility;
        for (name, v) in [("ratings", w.ratings), ("reviews", w.reviews), ("commenters", w.commenters)] {
            if !(v.is_finite() && v >= 0.0) {
                problems.push(format!("engagement.visibility.{name} must be a non-negative number"));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingBallot {
    pub ballot_id: BallotId,
    pub paper_id: PaperId,
    pub rater: UserId,
    pub handle: Handle,
    pub scores: Scores,
    pub cast_at: Tick,
    /// Set once the rater casts a newer ballot on the same paper.
    pub superseded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingSummary {
    pub paper_id: PaperId,
    /// Absent for every dimension while there are no ballots.
    pub means: BTreeMap<Dimension, f64>,
    pub counts: BTreeMap<Dimension, usize>,
}

impl RatingSummary {
    /// Mean of the per-dimension means.
    pub fn overall(&self) -> Option<f64> {
        if self.means.is_empty() {
            None
        } else {
            Some(self.means.values().sum::<f64>() / self.means.len() as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thread {
    pub thread_id: ThreadId,
    pub anchor_id: AnchorId,
    pub paper_id: PaperId,
    pub opened_at: Tick,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comment {
    pub comment_id: CommentId,
    pub thread_id: ThreadId,
    pub parent_id: Option<CommentId>,
    /// Real author; only the handle is shown publicly.
    pub author: UserId,
    pub handle: Handle,
    pub text: String,
    pub created_at: Tick,
    pub hidden: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReactionTarget {
    Comment(CommentId),
    Fragment(FragmentId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReactionToggle {
    pub target: ReactionTarget,
    pub emoji: String,
    pub added: bool,
    /// Reactions with this emoji on the target after the toggle.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngagementError {
    #[error(transparent)]
    Scores(ScoreError),
    #[error("authors cannot rate their own paper")]
    SelfRating,
    #[error("unknown thread {0}")]
    UnknownThread(ThreadId),
    #[error("unknown comment {0}")]
    UnknownComment(CommentId),
    #[error("parent comment {0} is not in this thread")]
    UnknownParent(CommentId),
    #[error("parent comment {0} is hidden")]
    ParentHidden(CommentId),
    #[error("comment text must be non-empty")]
    EmptyText,
    #[error("emoji {0:?} is not in the configured set")]
    UnknownEmoji(String),
}

impl EngagementError {
    pub fn code(&self) -> &'static str {
        match self {
            EngagementError::Scores(ScoreError::Incomplete(_)) => "INCOMPLETE_SCORES",
            EngagementError::Scores(ScoreError::OutOfRange { .. }) => "OUT_OF_RANGE",
            EngagementError::SelfRating => "SELF_RATING",
            EngagementError::UnknownThread(_) => "UNKNOWN_THREAD",
            EngagementError::UnknownComment(_) => "UNKNOWN_COMMENT",
            EngagementError::UnknownParent(_) => "UNKNOWN_PARENT",
            EngagementError::ParentHidden(_) => "PARENT_HIDDEN",
            EngagementError::EmptyText => "EMPTY_TEXT",
            EngagementError::UnknownEmoji(_) => "UNKNOWN_EMOJI",
        }
    }
}

type Result<T, E = EngagementError> = std::result::Result<T, E>;

/// Everything the visibility score may look at. Author identity is not part
/// of it, so equal engagement always ranks equally.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VisibilityInputs {
    pub mean_rating: Option<f64>,
    pub delivered_reviews: usize,
    pub distinct_commenters: usize,
}

pub fn visibility_score(inputs: &VisibilityInputs, w: &VisibilityWeights) -> f64 {
    w.ratings * inputs.mean_rating.unwrap_or(0.0)
        + w.reviews * (1.0 + inputs.delivered_reviews as f64).ln()
        + w.commenters * (1.0 + inputs.distinct_commenters as f64).ln()
}

pub fn summarize(paper: PaperId, ballots: &[&Scores]) -> RatingSummary {
    let mut means = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for d in Dimension::ALL {
        counts.insert(d, ballots.len());
        if !ballots.is_empty() {
            let sum: u64 = ballots.iter().map(|s| u64::from(s.get(d))).sum();
            means.insert(d, sum as f64 / ballots.len() as f64);
        }
    }
    RatingSummary { paper_id: paper, means, counts }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Engagement {
    policy: EngagementPolicy,
    ballots: Vec<RatingBallot>,
    current: BTreeMap<PaperId, BTreeMap<UserId, BallotId>>,
    threads: Vec<Thread>,
    comments: Vec<Comment>,
    #[serde(with = "crate::seq_map")]
    reactions: BTreeMap<(ReactionTarget, String, UserId), Handle>,
}

impl Engagement {
    pub fn new(policy: EngagementPolicy) -> Self {
        Self {
            policy,
            ballots: Vec::new(),
            current: BTreeMap::new(),
            threads: Vec::new(),
            comments: Vec::new(),
            reactions: BTreeMap::new(),
        }
    }

    pub fn policy(&self) -> &EngagementPolicy {
        &self.policy
    }

    /// Records a ballot, superseding the rater's previous one on the paper.
    /// The flag is true for the rater's first ballot on this paper.
    pub fn cast_rating(
        &mut self,
        paper: PaperId,
        rater: UserId,
        handle: Handle,
        scores: ScoreInput,
        is_author: bool,
        now: Tick,
    ) -> Result<(&RatingBallot, bool)> {
        let scores = scores.complete().map_err(EngagementError::Scores)?;
        if is_author {
            return Err(EngagementError::SelfRating);
        }
        let ballot_id = BallotId::from_index(self.ballots.len());
        let previous = self.current.entry(paper).or_default().insert(rater, ballot_id);
        if let Some(prev) = previous {
            self.ballots[prev.index()].superseded = true;
        }
        self.ballots.push(RatingBallot {
            ballot_id,
            paper_id: paper,
            rater,
            handle,
            scores,
            cast_at: now,
            superseded: false,
        });
        Ok((&self.ballots[ballot_id.index()], previous.is_none()))
    }

    pub fn ballots(&self) -> &[RatingBallot] {
        &self.ballots
    }

    pub fn summarize_ratings(&self, paper: PaperId) -> RatingSummary {
        let latest: Vec<&Scores> = self
            .current
            .get(&paper)
            .into_iter()
            .flat_map(|m| m.values())
            .map(|id| &self.ballots[id.index()].scores)
            .collect();
        summarize(paper, &latest)
    }

    pub fn open_thread(&mut self, anchor: AnchorId, paper: PaperId, now: Tick) -> &Thread {
        let thread_id = ThreadId::from_index(self.threads.len());
        self.threads.push(Thread { thread_id, anchor_id: anchor, paper_id: paper, opened_at: now });
        &self.threads[thread_id.index()]
    }

    pub fn thread(&self, id: ThreadId) -> Result<&Thread> {
        self.threads.get(id.index()).ok_or(EngagementError::UnknownThread(id))
    }

    pub fn threads(&self) -> &[Thread] {
        &self.threads
    }

    pub fn comment(&self, id: CommentId) -> Result<&Comment> {
        self.comments.get(id.index()).ok_or(EngagementError::UnknownComment(id))
    }

    pub fn comments(&self) -> &[Comment] {
        &self.comments
    }

    pub fn comments_in(&self, thread: ThreadId) -> impl Iterator<Item = &Comment> {
        self.comments.iter().filter(move |c| c.thread_id == thread)
    }

    pub fn post_comment(
        &mut self,
        thread: ThreadId,
        parent: Option<CommentId>,
        author: UserId,
        handle: Handle,
        text: &str,
        now: Tick,
    ) -> Result<&Comment> {
        self.thread(thread)?;
        if let Some(p) = parent {
            let parent = self.comments.get(p.index()).filter(|c| c.thread_id == thread);
            match parent {
                None => return Err(EngagementError::UnknownParent(p)),
                Some(c) if c.hidden => return Err(EngagementError::ParentHidden(p)),
                Some(_) => {}
            }
        }
        let text = text.trim();
        if text.is_empty() {
            return Err(EngagementError::EmptyText);
        }
        let comment_id = CommentId::from_index(self.comments.len());
        self.comments.push(Comment {
            comment_id,
            thread_id: thread,
            parent_id: parent,
            author,
            handle,
            text: text.to_string(),
            created_at: now,
            hidden: false,
        });
        Ok(&self.comments[comment_id.index()])
    }

    /// Tombstones or restores a comment. It stays in place either way.
    pub fn set_hidden(&mut self, id: CommentId, hidden: bool) -> Result<()> {
        self.comments
            .get_mut(id.index())
            .ok_or(EngagementError::UnknownComment(id))?
            .hidden = hidden;
        Ok(())
    }

    pub fn distinct_commenters(&self, paper: PaperId) -> usize {
        let threads: BTreeSet<ThreadId> =
            self.threads.iter().filter(|t| t.paper_id == paper).map(|t| t.thread_id).collect();
        self.comments
            .iter()
            .filter(|c| !c.hidden && threads.contains(&c.thread_id))
            .map(|c| c.author)
            .collect::<BTreeSet<_>>()
            .len()
    }

    /// Adds the reaction, or removes it if the same reactor already left it.
    /// Comment targets are checked here; fragment targets by the caller.
    pub fn react(
        &mut self,
        target: ReactionTarget,
        reactor: UserId,
        handle: Handle,
        emoji: &str,
    ) -> Result<ReactionToggle> {
        if !self.policy.emoji.iter().any(|e| e == emoji) {
            return Err(EngagementError::UnknownEmoji(emoji.to_string()));
        }
        if let ReactionTarget::Comment(c) = target {
            self.comment(c)?;
        }
        let key = (target, emoji.to_string(), reactor);
        let added = if self.reactions.remove(&key).is_some() {
            false
        } else {
            self.reactions.insert(key, handle);
            true
        };
        Ok(ReactionToggle {
            target,
            emoji: emoji.to_string(),
            added,
            count: self.reaction_count(target, emoji),
        })
    }

    pub fn reaction_count(&self, target: ReactionTarget, emoji: &str) -> usize {
        self.reactions.keys().filter(|(t, e, _)| *t == target && e == emoji).count()
    }

    /// Emoji counts on a target, in emoji order.
    pub fn reactions_on(&self, target: ReactionTarget) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for (t, e, _) in self.reactions.keys() {
            if *t == target {
                *out.entry(e.clone()).or_insert(0) += 1;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn eng() -> Engagement {
        Engagement::new(EngagementPolicy::default())
    }

    fn s(o: u8, so: u8, i: u8) -> ScoreInput {
        Scores::new(o, so, i).into()
    }

    #[test]
    fn ratings_summary_and_replacement() {
        let mut e = eng();
        let p = PaperId(0);
        assert!(e.summarize_ratings(p).means.is_empty());
        assert_eq!(e.summarize_ratings(p).counts[&Dimension::Impact], 0);
        for (u, o) in [(1, 4), (2, 5), (3, 3)] {
            e.cast_rating(p, UserId(u), Handle::User(UserId(u)), s(o, 7, 9), false, 0).unwrap();
        }
        let sum = e.summarize_ratings(p);
        assert_eq!(sum.means[&Dimension::Originality], 4.0);
        assert_eq!(sum.counts[&Dimension::Originality], 3);
        let (_, first) = e.cast_rating(p, UserId(1), Handle::User(UserId(1)), s(10, 7, 9), false, 1).unwrap();
        assert!(!first);
        let sum = e.summarize_ratings(p);
        assert_eq!(sum.means[&Dimension::Originality], 6.0);
        assert_eq!(sum.counts[&Dimension::Originality], 3);
        assert_eq!(e.ballots().len(), 4);
        assert!(e.ballots()[0].superseded);
    }

    #[test]
    fn rating_errors() {
        let mut e = eng();
        let h = Handle::User(UserId(1));
        let err = e.cast_rating(PaperId(0), UserId(1), h.clone(), s(11, 1, 1), false, 0).unwrap_err();
        assert_eq!(err.code(), "OUT_OF_RANGE");
        let err = e.cast_rating(PaperId(0), UserId(1), h, s(8, 7, 9), true, 0).unwrap_err();
        assert_eq!(err, EngagementError::SelfRating);
    }

    #[test]
    fn reply_chains_and_tombstones() {
        let mut e = eng();
        let t = e.open_thread(AnchorId(0), PaperId(0), 0).thread_id;
        let h = Handle::User(UserId(1));
        let a = e.post_comment(t, None, UserId(1), h.clone(), "A", 0).unwrap().comment_id;
        let b = e.post_comment(t, Some(a), UserId(1), h.clone(), "B", 0).unwrap().comment_id;
        let c = e.post_comment(t, Some(b), UserId(2), h.clone(), "C", 0).unwrap().comment_id;
        // depth of C
        let mut depth = 1;
        let mut cur = e.comment(c).unwrap().parent_id;
        while let Some(p) = cur {
            depth += 1;
            cur = e.comment(p).unwrap().parent_id;
        }
        assert_eq!(depth, 3);
        e.set_hidden(b, true).unwrap();
        assert_eq!(
            e.post_comment(t, Some(b), UserId(3), h.clone(), "D", 0).unwrap_err(),
            EngagementError::ParentHidden(b)
        );
        // tombstoned comment keeps its place in the tree
        assert_eq!(e.comment(c).unwrap().parent_id, Some(b));
        assert_eq!(e.comments_in(t).count(), 3);
        assert_eq!(e.post_comment(t, None, UserId(1), h.clone(), "  ", 0).unwrap_err().code(), "EMPTY_TEXT");
        let t2 = e.open_thread(AnchorId(1), PaperId(0), 0).thread_id;
        assert_eq!(e.post_comment(t2, Some(a), UserId(1), h, "x", 0).unwrap_err().code(), "UNKNOWN_PARENT");
    }

    #[test]
    fn reactions_toggle_and_count() {
        let mut e = eng();
        let f = ReactionTarget::Fragment(FragmentId(0));
        let h = |u| Handle::User(UserId(u));
        assert_eq!(e.react(f, UserId(1), h(1), "👍").unwrap().count, 1);
        let off = e.react(f, UserId(1), h(1), "👍").unwrap();
        assert_eq!((off.added, off.count), (false, 0));
        e.react(f, UserId(1), h(1), "👍").unwrap();
        assert_eq!(e.react(f, UserId(2), h(2), "👍").unwrap().count, 2);
        assert_eq!(e.react(f, UserId(2), h(2), "🦀").unwrap_err().code(), "UNKNOWN_EMOJI");
        assert_eq!(
            e.react(ReactionTarget::Comment(CommentId(9)), UserId(2), h(2), "👍").unwrap_err().code(),
            "UNKNOWN_COMMENT"
        );
    }

    #[test]
    fn visibility_examples() {
        let w = VisibilityWeights::default();
        assert_eq!(visibility_score(&VisibilityInputs::default(), &w), 0.0);
        let mean = summarize(PaperId(0), &[&Scores::new(8, 7, 9)]).overall();
        let inputs = VisibilityInputs { mean_rating: mean, delivered_reviews: 2, distinct_commenters: 3 };
        let expected = 8.0 + 0.5 * 3f64.ln() + 0.25 * 4f64.ln();
        assert!((visibility_score(&inputs, &w) - expected).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn summary_ignores_arrival_order(
            ballots in prop::collection::vec((1u8..=10, 1u8..=10, 1u8..=10), 1..30),
            seed in any::<u64>(),
        ) {
            let scores: Vec<Scores> = ballots.iter().map(|&(a, b, c)| Scores::new(a, b, c)).collect();
            let forward: Vec<&Scores> = scores.iter().collect();
            let mut shuffled = forward.clone();
            // deterministic rotation plus reversal as the permutation
            let k = (seed as usize) % shuffled.len();
            shuffled.rotate_left(k);
            shuffled.reverse();
            let a = summarize(PaperId(0), &forward);
            let b = summarize(PaperId(0), &shuffled);
            prop_assert_eq!(&a, &b);
            for d in Dimension::ALL {
                let m = a.means[&d];
                prop_assert!((1.0..=10.0).contains(&m));
            }
        }
    }
}
