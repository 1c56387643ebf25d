//! Paid review marketplace: escrowed bounties, licensed bids, expertise
//! matching, review delivery and meta-reviews.
//!
//! A bounty's reward is escrowed as one hold per slot (`floor(reward/slots)`
//! each) plus one hold for the indivisible remainder. Each slot hold ends
//! either paid to its reviewer (at the bid's ask, the rest refunded) or
//! refunded to the poster, and the remainder hold is refunded when the bounty
//! closes, so every credit escrowed is accounted for exactly once.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identity::{Identity, Pseudonym, ReviewerLicense};
use crate::ids::{
    AccountId, AssignmentId, BidId, BountyId, Credits, HoldId, MetaReviewId, PaperId, ReviewId,
    Tick, UserId,
};
use crate::ledger::{HoldReason, HoldState, Ledger, LedgerError};
use crate::scores::{ScoreError, ScoreInput, Scores};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchWeights {
    pub expertise: f64,
    pub reputation: f64,
    pub price: f64,
}

impl Default for MatchWeights {
    fn default() -> Self {
        Self { expertise: 0.6, reputation: 0.3, price: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReviewPolicy {
    pub match_weights: MatchWeights,
    /// Minimum review length in characters.
    pub min_review_chars: usize,
    /// Ticks after the bounty deadline during which reviews are still accepted.
    pub grace_ticks: Tick,
}

impl Default for ReviewPolicy {
    fn default() -> Self {
        Self { match_weights: MatchWeights::default(), min_review_chars: 500, grace_ticks: 100 }
    }
}

impl ReviewPolicy {
    pub fn validate(&self, problems: &mut Vec<String>) {
        let w = self.match_weights;
        for (name, v) in [("expertise", w.expertise), ("reputation", w.reputation), ("price", w.price)] {
            if !(v.is_finite() && v >= 0.0) {
                problems.push(format!("review.match_weights.{name} must be a non-negative number"));
            }
        }
        if self.min_review_chars == 0 {
            problems.push("review.min_review_chars must be at least 1".into());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BountyState {
    Open,
    Matched,
    Fulfilled,
    Expired,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AssignmentState {
    Assigned,
    Delivered,
    Defaulted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bounty {
    pub bounty_id: BountyId,
    pub paper_id: PaperId,
    pub poster: UserId,
    pub poster_account: AccountId,
    pub reward: Credits,
    pub required_fields: BTreeSet<String>,
    pub slots: u32,
    pub deadline: Tick,
    pub state: BountyState,
    pub per_slot: Credits,
    pub slot_holds: Vec<HoldId>,
    pub remainder_hold: Option<HoldId>,
    pub posted_at: Tick,
}

impl Bounty {
    pub fn remainder(&self) -> Credits {
        self.reward - self.per_slot * Credits::from(self.slots)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bid {
    pub bid_id: BidId,
    pub bounty_id: BountyId,
    pub reviewer: UserId,
    pub account: AccountId,
    pub ask: Credits,
    pub placed_at: Tick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub assignment_id: AssignmentId,
    pub bounty_id: BountyId,
    pub bid_id: BidId,
    pub reviewer: UserId,
    pub account: AccountId,
    pub ask: Credits,
    pub match_score: f64,
    pub escrow_hold: HoldId,
    pub state: AssignmentState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Review {
    pub review_id: ReviewId,
    pub assignment_id: AssignmentId,
    pub bounty_id: BountyId,
    pub paper_id: PaperId,
    pub reviewer: UserId,
    /// Published handle; reviews appear under the reviewer's per-paper pseudonym.
    pub handle: Pseudonym,
    pub scores: Scores,
    pub text: String,
    pub submitted_at: Tick,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaReview {
    pub meta_id: MetaReviewId,
    pub review_id: ReviewId,
    pub rater: UserId,
    pub quality: u8,
    pub submitted_at: Tick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MatchOutcome {
    Matched { assignments: Vec<AssignmentId> },
    /// No bids arrived; the bounty expired and its escrow was refunded.
    Expired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReviewOutcome {
    Delivered { review_id: ReviewId },
    /// Too late: the assignment defaulted and its slot was refunded.
    DeadlinePassed { assignment_id: AssignmentId },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReviewError {
    #[error("unknown bounty {0}")]
    UnknownBounty(BountyId),
    #[error("unknown assignment {0}")]
    UnknownAssignment(AssignmentId),
    #[error("unknown review {0}")]
    UnknownReview(ReviewId),
    #[error("slots must be between 1 and the reward")]
    InvalidSlots,
    #[error("reward must be positive")]
    InvalidReward,
    #[error("deadline {deadline} is not after now ({now})")]
    InvalidDeadline { deadline: Tick, now: Tick },
    #[error("bounty {0} is not accepting bids")]
    BountyClosed(BountyId),
    #[error("bidder holds no active license covering the bounty's fields")]
    Unlicensed,
    #[error("authors cannot bid on their own paper")]
    ConflictOfInterest,
    #[error("ask {ask} exceeds the per-slot payout {per_slot}")]
    AskTooHigh { ask: Credits, per_slot: Credits },
    #[error("ask must be positive")]
    InvalidAsk,
    #[error("reviewer already bid on bounty {0}")]
    DuplicateBid(BountyId),
    #[error("only the poster may match before the deadline")]
    NotPoster,
    #[error("assignment {0} is not open for delivery")]
    AssignmentClosed(AssignmentId),
    #[error("assignment {0} belongs to another reviewer")]
    NotAssignee(AssignmentId),
    #[error("missing score dimension")]
    IncompleteScores(ScoreError),
    #[error(transparent)]
    Score(ScoreError),
    #[error("review text has {len} characters, at least {min} required")]
    TextTooShort { len: usize, min: usize },
    #[error("reviewers cannot meta-review their own review")]
    SelfMetaReview,
    #[error("rater already meta-reviewed review {0}")]
    Duplicate(ReviewId),
    #[error("meta-review quality {0} is outside 1..=5")]
    QualityOutOfRange(u8),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

impl ReviewError {
    pub fn code(&self) -> &'static str {
        match self {
            ReviewError::UnknownBounty(_) => "UNKNOWN_BOUNTY",
            ReviewError::UnknownAssignment(_) => "UNKNOWN_ASSIGNMENT",
            ReviewError::UnknownReview(_) => "UNKNOWN_REVIEW",
            ReviewError::InvalidSlots => "INVALID_SLOTS",
            ReviewError::InvalidReward => "INVALID_AMOUNT",
            ReviewError::InvalidDeadline { .. } => "VALIDATION_ERROR",
            ReviewError::BountyClosed(_) => "BOUNTY_CLOSED",
            ReviewError::Unlicensed => "UNLICENSED",
            ReviewError::ConflictOfInterest => "CONFLICT_OF_INTEREST",
            ReviewError::AskTooHigh { .. } => "ASK_TOO_HIGH",
            ReviewError::InvalidAsk => "INVALID_ASK",
            ReviewError::DuplicateBid(_) => "DUPLICATE_BID",
            ReviewError::NotPoster => "NOT_POSTER",
            ReviewError::AssignmentClosed(_) => "ASSIGNMENT_CLOSED",
            ReviewError::NotAssignee(_) => "NOT_ASSIGNEE",
            ReviewError::IncompleteScores(_) => "INCOMPLETE_SCORES",
            ReviewError::Score(_) => "OUT_OF_RANGE",
            ReviewError::TextTooShort { .. } => "TEXT_TOO_SHORT",
            ReviewError::SelfMetaReview => "SELF_META_REVIEW",
            ReviewError::Duplicate(_) => "DUPLICATE",
            ReviewError::QualityOutOfRange(_) => "OUT_OF_RANGE",
            ReviewError::Ledger(e) => e.code(),
        }
    }
}

impl From<ScoreError> for ReviewError {
    fn from(e: ScoreError) -> Self {
        match e {
            ScoreError::Incomplete(_) => ReviewError::IncompleteScores(e),
            ScoreError::OutOfRange { .. } => ReviewError::Score(e),
        }
    }
}

type Result<T, E = ReviewError> = std::result::Result<T, E>;

/// `|a ∩ b| / |a ∪ b|`, zero when both sets are empty.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn match_score(
    weights: &MatchWeights,
    expertise: &BTreeSet<String>,
    required: &BTreeSet<String>,
    reputation: f64,
    ask: Credits,
    per_slot: Credits,
) -> f64 {
    weights.expertise * jaccard(expertise, required)
        + weights.reputation * reputation
        + weights.price * (1.0 - ask as f64 / per_slot as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub bid_id: BidId,
    pub reviewer: UserId,
    pub placed_at: Tick,
    pub score: f64,
}

/// Score descending, then earlier bid, then lower user id.
pub fn rank(candidates: &mut [Candidate]) {
    candidates.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.placed_at.cmp(&b.placed_at))
            .then(a.reviewer.cmp(&b.reviewer))
    });
}

pub fn select_top(mut candidates: Vec<Candidate>, slots: usize) -> Vec<Candidate> {
    rank(&mut candidates);
    candidates.truncate(slots);
    candidates
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewMarket {
    policy: ReviewPolicy,
    bounties: Vec<Bounty>,
    bids: Vec<Bid>,
    assignments: Vec<Assignment>,
    reviews: Vec<Review>,
    meta_reviews: Vec<MetaReview>,
    meta_index: BTreeSet<(ReviewId, UserId)>,
}

impl ReviewMarket {
    pub fn new(policy: ReviewPolicy) -> Self {
        Self {
            policy,
            bounties: Vec::new(),
            bids: Vec::new(),
            assignments: Vec::new(),
            reviews: Vec::new(),
            meta_reviews: Vec::new(),
            meta_index: BTreeSet::new(),
        }
    }

    pub fn policy(&self) -> &ReviewPolicy {
        &self.policy
    }

    pub fn bounty(&self, id: BountyId) -> Result<&Bounty> {
        self.bounties.get(id.index()).ok_or(ReviewError::UnknownBounty(id))
    }

    pub fn bounties(&self) -> &[Bounty] {
        &self.bounties
    }

    pub fn bids_of(&self, bounty: BountyId) -> impl Iterator<Item = &Bid> {
        self.bids.iter().filter(move |b| b.bounty_id == bounty)
    }

    pub fn assignment(&self, id: AssignmentId) -> Result<&Assignment> {
        self.assignments.get(id.index()).ok_or(ReviewError::UnknownAssignment(id))
    }

    pub fn assignments(&self) -> &[Assignment] {
        &self.assignments
    }

    pub fn assignments_of(&self, bounty: BountyId) -> impl Iterator<Item = &Assignment> {
        self.assignments.iter().filter(move |a| a.bounty_id == bounty)
    }

    pub fn review(&self, id: ReviewId) -> Result<&Review> {
        self.reviews.get(id.index()).ok_or(ReviewError::UnknownReview(id))
    }

    pub fn reviews(&self) -> &[Review] {
        &self.reviews
    }

    pub fn meta_reviews(&self) -> &[MetaReview] {
        &self.meta_reviews
    }

    pub fn delivered_reviews(&self, paper: PaperId) -> usize {
        self.reviews.iter().filter(|r| r.paper_id == paper).count()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn post_bounty(
        &mut self,
        ledger: &mut Ledger,
        paper: PaperId,
        poster: UserId,
        poster_account: AccountId,
        reward: Credits,
        required_fields: BTreeSet<String>,
        slots: u32,
        deadline: Tick,
        now: Tick,
    ) -> Result<&Bounty> {
        if reward == 0 {
            return Err(ReviewError::InvalidReward);
        }
        if slots == 0 || Credits::from(slots) > reward {
            return Err(ReviewError::InvalidSlots);
        }
        if deadline <= now {
            return Err(ReviewError::InvalidDeadline { deadline, now });
        }
        let balance = ledger.balance(poster_account)?;
        if balance < reward {
            return Err(LedgerError::InsufficientFunds {
                account: poster_account,
                balance,
                needed: reward,
            }
            .into());
        }
        let bounty_id = BountyId::from_index(self.bounties.len());
        let per_slot = reward / Credits::from(slots);
        let remainder = reward - per_slot * Credits::from(slots);
        let mut slot_holds = Vec::with_capacity(slots as usize);
        for slot in 0..slots {
            let memo = format!("{bounty_id}:slot-{slot}");
            slot_holds.push(ledger.hold_escrow(poster_account, per_slot, HoldReason::Bounty, memo)?.hold_id);
        }
        let remainder_hold = if remainder > 0 {
            let memo = format!("{bounty_id}:remainder");
            Some(ledger.hold_escrow(poster_account, remainder, HoldReason::Bounty, memo)?.hold_id)
        } else {
            None
        };
        self.bounties.push(Bounty {
            bounty_id,
            paper_id: paper,
            poster,
            poster_account,
            reward,
            required_fields,
            slots,
            deadline,
            state: BountyState::Open,
            per_slot,
            slot_holds,
            remainder_hold,
            posted_at: now,
        });
        Ok(&self.bounties[bounty_id.index()])
    }

    #[allow(clippy::too_many_arguments)]
    pub fn place_bid(
        &mut self,
        bounty: BountyId,
        reviewer: UserId,
        account: AccountId,
        ask: Credits,
        is_author: bool,
        license: Option<&ReviewerLicense>,
        now: Tick,
    ) -> Result<&Bid> {
        let b = self.bounty(bounty)?;
        if b.state != BountyState::Open || now >= b.deadline {
            return Err(ReviewError::BountyClosed(bounty));
        }
        if is_author {
            return Err(ReviewError::ConflictOfInterest);
        }
        let covered = license.is_some_and(|l| {
            b.required_fields.is_empty() || !l.fields_of_expertise.is_disjoint(&b.required_fields)
        });
        if !covered {
            return Err(ReviewError::Unlicensed);
        }
        if ask == 0 {
            return Err(ReviewError::InvalidAsk);
        }
        if ask > b.per_slot {
            return Err(ReviewError::AskTooHigh { ask, per_slot: b.per_slot });
        }
        if self.bids_of(bounty).any(|x| x.reviewer == reviewer) {
            return Err(ReviewError::DuplicateBid(bounty));
        }
        let bid_id = BidId::from_index(self.bids.len());
        self.bids.push(Bid { bid_id, bounty_id: bounty, reviewer, account, ask, placed_at: now });
        Ok(&self.bids[bid_id.index()])
    }

    /// Scores every bid on the bounty without changing anything.
    pub fn candidates(&self, identity: &Identity, bounty: BountyId) -> Result<Vec<Candidate>> {
        let b = self.bounty(bounty)?;
        let weights = &self.policy.match_weights;
        self.bids_of(bounty)
            .map(|bid| {
                let user = identity.user(bid.reviewer).map_err(|_| ReviewError::Unlicensed)?;
                Ok(Candidate {
                    bid_id: bid.bid_id,
                    reviewer: bid.reviewer,
                    placed_at: bid.placed_at,
                    score: match_score(
                        weights,
                        &user.expertise,
                        &b.required_fields,
                        user.reputation,
                        bid.ask,
                        b.per_slot,
                    ),
                })
            })
            .collect()
    }

    /// Assigns the top `slots` bids. Anyone may trigger matching once the
    /// deadline is reached; before that only the poster may.
    pub fn match_reviewers(
        &mut self,
        ledger: &mut Ledger,
        identity: &Identity,
        bounty: BountyId,
        caller: Option<UserId>,
        now: Tick,
    ) -> Result<MatchOutcome> {
        let b = self.bounty(bounty)?.clone();
        if b.state != BountyState::Open {
            return Err(ReviewError::BountyClosed(bounty));
        }
        if now < b.deadline && caller != Some(b.poster) {
            return Err(ReviewError::NotPoster);
        }
        let candidates = self.candidates(identity, bounty)?;
        if candidates.is_empty() {
            for &hold in b.slot_holds.iter().chain(&b.remainder_hold) {
                ledger.refund_escrow(hold, format!("{bounty}:expired"))?;
            }
            self.bounties[bounty.index()].state = BountyState::Expired;
            return Ok(MatchOutcome::Expired);
        }
        let chosen = select_top(candidates, b.slots as usize);
        let mut ids = Vec::with_capacity(chosen.len());
        for (c, &hold) in chosen.iter().zip(&b.slot_holds) {
            let bid = &self.bids[c.bid_id.index()];
            let assignment_id = AssignmentId::from_index(self.assignments.len());
            self.assignments.push(Assignment {
                assignment_id,
                bounty_id: bounty,
                bid_id: c.bid_id,
                reviewer: bid.reviewer,
                account: bid.account,
                ask: bid.ask,
                match_score: c.score,
                escrow_hold: hold,
                state: AssignmentState::Assigned,
            });
            ids.push(assignment_id);
        }
        for &hold in &b.slot_holds[chosen.len()..] {
            ledger.refund_escrow(hold, format!("{bounty}:unfilled"))?;
        }
        self.bounties[bounty.index()].state = BountyState::Matched;
        Ok(MatchOutcome::Matched { assignments: ids })
    }

    fn overdue(&self, bounty: &Bounty, now: Tick) -> bool {
        now > bounty.deadline.saturating_add(self.policy.grace_ticks)
    }

    fn default_assignment(&mut self, ledger: &mut Ledger, id: AssignmentId) -> Result<()> {
        let a = &self.assignments[id.index()];
        ledger.refund_escrow(a.escrow_hold, format!("{id}:defaulted"))?;
        self.assignments[id.index()].state = AssignmentState::Defaulted;
        Ok(())
    }

    /// Closes the bounty once no assignment is still outstanding.
    fn close_if_done(&mut self, ledger: &mut Ledger, bounty: BountyId) -> Result<()> {
        if self.assignments_of(bounty).any(|a| a.state == AssignmentState::Assigned) {
            return Ok(());
        }
        if let Some(hold) = self.bounties[bounty.index()].remainder_hold {
            ledger.refund_escrow(hold, format!("{bounty}:remainder"))?;
        }
        self.bounties[bounty.index()].state = BountyState::Fulfilled;
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    pub fn submit_review(
        &mut self,
        ledger: &mut Ledger,
        assignment: AssignmentId,
        reviewer: UserId,
        handle: Pseudonym,
        scores: ScoreInput,
        text: &str,
        now: Tick,
    ) -> Result<ReviewOutcome> {
        let a = self.assignment(assignment)?.clone();
        if a.state != AssignmentState::Assigned {
            return Err(ReviewError::AssignmentClosed(assignment));
        }
        if a.reviewer != reviewer {
            return Err(ReviewError::NotAssignee(assignment));
        }
        let bounty = self.bounties[a.bounty_id.index()].clone();
        if self.overdue(&bounty, now) {
            self.default_assignment(ledger, assignment)?;
            self.close_if_done(ledger, a.bounty_id)?;
            return Ok(ReviewOutcome::DeadlinePassed { assignment_id: assignment });
        }
        let scores = scores.complete()?;
        let text = text.trim();
        let len = text.chars().count();
        if len < self.policy.min_review_chars {
            return Err(ReviewError::TextTooShort { len, min: self.policy.min_review_chars });
        }
        ledger.release_partial(a.escrow_hold, a.account, a.ask, format!("{assignment}"))?;
        self.assignments[assignment.index()].state = AssignmentState::Delivered;
        let review_id = ReviewId::from_index(self.reviews.len());
        self.reviews.push(Review {
            review_id,
            assignment_id: assignment,
            bounty_id: a.bounty_id,
            paper_id: bounty.paper_id,
            reviewer,
            handle,
            scores,
            text: text.to_string(),
            submitted_at: now,
        });
        self.close_if_done(ledger, a.bounty_id)?;
        Ok(ReviewOutcome::Delivered { review_id })
    }

    /// Defaults every outstanding assignment on the bounty whose grace period
    /// has run out.
    pub fn default_overdue(
        &mut self,
        ledger: &mut Ledger,
        bounty: BountyId,
        now: Tick,
    ) -> Result<Vec<AssignmentId>> {
        let b = self.bounty(bounty)?.clone();
        if b.state != BountyState::Matched || !self.overdue(&b, now) {
            return Ok(Vec::new());
        }
        let late: Vec<AssignmentId> = self
            .assignments_of(bounty)
            .filter(|a| a.state == AssignmentState::Assigned)
            .map(|a| a.assignment_id)
            .collect();
        for &id in &late {
            self.default_assignment(ledger, id)?;
        }
        self.close_if_done(ledger, bounty)?;
        Ok(late)
    }

    pub fn submit_meta_review(
        &mut self,
        review: ReviewId,
        rater: UserId,
        quality: u8,
        now: Tick,
    ) -> Result<&MetaReview> {
        let r = self.review(review)?;
        if r.reviewer == rater {
            return Err(ReviewError::SelfMetaReview);
        }
        if !(1..=5).contains(&quality) {
            return Err(ReviewError::QualityOutOfRange(quality));
        }
        if self.meta_index.contains(&(review, rater)) {
            return Err(ReviewError::Duplicate(review));
        }
        let meta_id = MetaReviewId::from_index(self.meta_reviews.len());
        self.meta_reviews.push(MetaReview { meta_id, review_id: review, rater, quality, submitted_at: now });
        self.meta_index.insert((review, rater));
        Ok(&self.meta_reviews[meta_id.index()])
    }

    /// Checks every bounty's escrow against its state: holds sum to the reward
    /// and exactly the holds of live obligations are still held.
    pub fn audit(&self, ledger: &Ledger) -> std::result::Result<(), String> {
        let state_of = |h: HoldId| ledger.hold(h).map(|h| (h.amount, h.state)).map_err(|e| e.to_string());
        for b in &self.bounties {
            let mut total = 0;
            let mut held: BTreeMap<HoldId, bool> = BTreeMap::new();
            for &h in b.slot_holds.iter().chain(&b.remainder_hold) {
                let (amount, state) = state_of(h)?;
                total += amount;
                held.insert(h, state == HoldState::Held);
            }
            if total != b.reward {
                return Err(format!("{}: holds total {total}, reward {}", b.bounty_id, b.reward));
            }
            let mut expect: BTreeMap<HoldId, bool> = held.keys().map(|&h| (h, false)).collect();
            match b.state {
                BountyState::Open => expect.values_mut().for_each(|v| *v = true),
                BountyState::Matched => {
                    if let Some(h) = b.remainder_hold {
                        expect.insert(h, true);
                    }
                    for a in self.assignments_of(b.bounty_id) {
                        expect.insert(a.escrow_hold, a.state == AssignmentState::Assigned);
                    }
                }
                BountyState::Fulfilled | BountyState::Expired => {}
            }
            if expect != held {
                return Err(format!("{} in state {:?} has inconsistent escrow holds", b.bounty_id, b.state));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::IdentityPolicy;
    use crate::ledger::{LedgerPolicy, Owner, TxnKind, ESCROW_POOL, TREASURY};
    use proptest::prelude::*;

    fn topics(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    struct World {
        ledger: Ledger,
        identity: Identity,
        market: ReviewMarket,
        accounts: Vec<AccountId>,
    }

    /// User 0 is the author; users 1.. are licensed reviewers in "ml".
    fn world(reviewers: usize, author_funds: Credits) -> World {
        let mut ledger = Ledger::genesis(LedgerPolicy::default(), 0);
        let mut identity = Identity::new(IdentityPolicy::default());
        let mut accounts = Vec::new();
        for i in 0..=reviewers {
            let u = identity.register_user(&format!("u{i}"), ["ml".to_string()], 0).unwrap().user_id;
            if i > 0 {
                identity.grant_license(u, ["ml".to_string()], 90, 0).unwrap();
            }
            let a = ledger.open_account(Owner::User(u), 0).unwrap();
            if i == 0 && author_funds > 0 {
                ledger.post_transaction(TREASURY, a, author_funds, TxnKind::DirectReward, "seed").unwrap();
            }
            accounts.push(a);
        }
        World { ledger, identity, market: ReviewMarket::new(ReviewPolicy::default()), accounts }
    }

    impl World {
        fn post(&mut self, reward: Credits, slots: u32) -> Result<BountyId> {
            let acct = self.accounts[0];
            self.market
                .post_bounty(&mut self.ledger, PaperId(0), UserId(0), acct, reward, topics(&["ml"]), slots, 10, 0)
                .map(|b| b.bounty_id)
        }

        fn bid(&mut self, bounty: BountyId, user: u64, ask: Credits, at: Tick) -> Result<BidId> {
            let license = self.identity.active_license(UserId(user)).cloned();
            self.market
                .place_bid(bounty, UserId(user), self.accounts[user as usize], ask, user == 0, license.as_ref(), at)
                .map(|b| b.bid_id)
        }

        fn bal(&self, user: usize) -> Credits {
            self.ledger.balance(self.accounts[user]).unwrap()
        }
    }

    fn long_text() -> String {
        "a careful and thorough assessment ".repeat(20)
    }

    fn full() -> ScoreInput {
        Scores::new(7, 8, 6).into()
    }

    fn handle(w: &mut World, user: u64) -> Pseudonym {
        w.identity.pseudonym_for(UserId(user), PaperId(0)).unwrap()
    }

    #[test]
    fn slot_arithmetic() {
        let mut w = world(0, 200);
        let b = w.post(90, 3).unwrap();
        assert_eq!((w.market.bounty(b).unwrap().per_slot, w.market.bounty(b).unwrap().remainder()), (30, 0));
        let b = w.post(100, 3).unwrap();
        assert_eq!((w.market.bounty(b).unwrap().per_slot, w.market.bounty(b).unwrap().remainder()), (33, 1));
        assert_eq!(w.ledger.balance(ESCROW_POOL).unwrap(), 190);
        assert_eq!(w.post(5, 0).unwrap_err().code(), "INVALID_SLOTS");
    }

    #[test]
    fn poster_needs_the_reward() {
        let mut w = world(0, 50);
        assert_eq!(w.post(90, 3).unwrap_err().code(), "INSUFFICIENT_FUNDS");
        assert_eq!(w.bal(0), 50);
        assert!(w.ledger.holds().is_empty());
    }

    #[test]
    fn bid_rules() {
        let mut w = world(2, 200);
        let b = w.post(90, 3).unwrap();
        w.bid(b, 1, 25, 1).unwrap();
        assert_eq!(w.bid(b, 0, 25, 1).unwrap_err(), ReviewError::ConflictOfInterest);
        assert_eq!(w.bid(b, 2, 35, 1).unwrap_err().code(), "ASK_TOO_HIGH");
        assert_eq!(w.bid(b, 1, 20, 1).unwrap_err().code(), "DUPLICATE_BID");
        assert_eq!(w.bid(b, 2, 0, 1).unwrap_err().code(), "INVALID_ASK");
        w.identity.revoke_license(UserId(2)).unwrap();
        assert_eq!(w.bid(b, 2, 20, 1).unwrap_err().code(), "UNLICENSED");
    }

    #[test]
    fn license_must_cover_a_required_field() {
        let mut w = world(1, 200);
        let acct = w.accounts[0];
        let b = w
            .market
            .post_bounty(&mut w.ledger, PaperId(0), UserId(0), acct, 30, topics(&["biology"]), 1, 10, 0)
            .unwrap()
            .bounty_id;
        assert_eq!(w.bid(b, 1, 10, 1).unwrap_err().code(), "UNLICENSED");
    }

    #[test]
    fn jaccard_example() {
        assert_eq!(jaccard(&topics(&["a", "b", "c"]), &topics(&["b", "c", "d"])), 0.5);
        assert_eq!(jaccard(&topics(&[]), &topics(&[])), 0.0);
    }

    #[test]
    fn equal_scores_prefer_the_earlier_bid() {
        let mut w = world(2, 200);
        let b = w.post(30, 1).unwrap();
        w.bid(b, 2, 20, 1).unwrap();
        w.bid(b, 1, 20, 2).unwrap();
        let out = w.market.match_reviewers(&mut w.ledger, &w.identity, b, Some(UserId(0)), 3).unwrap();
        let MatchOutcome::Matched { assignments } = out else { panic!("expected a match") };
        assert_eq!(w.market.assignment(assignments[0]).unwrap().reviewer, UserId(2));
    }

    #[test]
    fn top_two_of_five_against_brute_force() {
        let mut w = world(5, 500);
        let b = w.post(100, 2).unwrap();
        for (user, ask) in [(1, 50), (2, 10), (3, 40), (4, 10), (5, 30)] {
            w.bid(b, user, ask, user).unwrap();
        }
        let cands = w.market.candidates(&w.identity, b).unwrap();
        // a candidate is selected iff fewer than `slots` others beat it on the full key
        let beats = |x: &Candidate, y: &Candidate| {
            x.score > y.score
                || (x.score == y.score && (x.placed_at, x.reviewer) < (y.placed_at, y.reviewer))
        };
        let mut expected: Vec<UserId> = cands
            .iter()
            .filter(|c| cands.iter().filter(|o| beats(o, c)).count() < 2)
            .map(|c| c.reviewer)
            .collect();
        expected.sort();
        let out = w.market.match_reviewers(&mut w.ledger, &w.identity, b, Some(UserId(0)), 5).unwrap();
        let MatchOutcome::Matched { assignments } = out else { panic!("expected a match") };
        let mut got: Vec<UserId> = assignments.iter().map(|&a| w.market.assignment(a).unwrap().reviewer).collect();
        got.sort();
        assert_eq!(got, expected);
        assert_eq!(got, vec![UserId(2), UserId(4)]);
    }

    #[test]
    fn no_bids_expires_and_refunds() {
        let mut w = world(0, 200);
        let b = w.post(100, 3).unwrap();
        assert_eq!(
            w.market.match_reviewers(&mut w.ledger, &w.identity, b, None, 5).unwrap_err(),
            ReviewError::NotPoster
        );
        let out = w.market.match_reviewers(&mut w.ledger, &w.identity, b, None, 10).unwrap();
        assert_eq!(out, MatchOutcome::Expired);
        assert_eq!(w.bal(0), 200);
        assert_eq!(w.market.bounty(b).unwrap().state, BountyState::Expired);
        w.market.audit(&w.ledger).unwrap();
    }

    #[test]
    fn reviewer_paid_ask_and_poster_refunded() {
        let mut w = world(1, 200);
        let b = w.post(30, 1).unwrap();
        w.bid(b, 1, 25, 1).unwrap();
        w.market.match_reviewers(&mut w.ledger, &w.identity, b, Some(UserId(0)), 2).unwrap();
        let h = handle(&mut w, 1);
        let out = w
            .market
            .submit_review(&mut w.ledger, AssignmentId(0), UserId(1), h, full(), &long_text(), 3)
            .unwrap();
        assert!(matches!(out, ReviewOutcome::Delivered { .. }));
        assert_eq!(w.bal(1), 25);
        assert_eq!(w.bal(0), 175);
        assert_eq!(w.market.bounty(b).unwrap().state, BountyState::Fulfilled);
        assert_eq!(w.ledger.balance(ESCROW_POOL).unwrap(), 0);
        w.market.audit(&w.ledger).unwrap();
    }

    #[test]
    fn review_validation() {
        let mut w = world(1, 200);
        let b = w.post(30, 1).unwrap();
        w.bid(b, 1, 25, 1).unwrap();
        w.market.match_reviewers(&mut w.ledger, &w.identity, b, Some(UserId(0)), 2).unwrap();
        let h = handle(&mut w, 1);
        let missing = ScoreInput { impact: None, ..full() };
        let err = w
            .market
            .submit_review(&mut w.ledger, AssignmentId(0), UserId(1), h.clone(), missing, &long_text(), 3)
            .unwrap_err();
        assert_eq!(err.code(), "INCOMPLETE_SCORES");
        let err = w
            .market
            .submit_review(&mut w.ledger, AssignmentId(0), UserId(1), h.clone(), full(), "too short", 3)
            .unwrap_err();
        assert_eq!(err.code(), "TEXT_TOO_SHORT");
        let err = w
            .market
            .submit_review(&mut w.ledger, AssignmentId(0), UserId(0), h, full(), &long_text(), 3)
            .unwrap_err();
        assert_eq!(err.code(), "NOT_ASSIGNEE");
        assert_eq!(w.market.assignment(AssignmentId(0)).unwrap().state, AssignmentState::Assigned);
    }

    #[test]
    fn late_review_defaults() {
        let mut w = world(1, 200);
        let b = w.post(30, 1).unwrap();
        w.bid(b, 1, 25, 1).unwrap();
        w.market.match_reviewers(&mut w.ledger, &w.identity, b, Some(UserId(0)), 2).unwrap();
        let h = handle(&mut w, 1);
        // deadline 10 + grace 100
        let out = w
            .market
            .submit_review(&mut w.ledger, AssignmentId(0), UserId(1), h, full(), &long_text(), 111)
            .unwrap();
        assert_eq!(out, ReviewOutcome::DeadlinePassed { assignment_id: AssignmentId(0) });
        assert_eq!(w.bal(1), 0);
        assert_eq!(w.bal(0), 200);
        assert_eq!(w.market.assignment(AssignmentId(0)).unwrap().state, AssignmentState::Defaulted);
        assert_eq!(w.market.bounty(b).unwrap().state, BountyState::Fulfilled);
    }

    #[test]
    fn unfilled_slots_and_remainder_are_refunded() {
        let mut w = world(2, 200);
        let b = w.post(100, 3).unwrap();
        w.bid(b, 1, 33, 1).unwrap();
        w.market.match_reviewers(&mut w.ledger, &w.identity, b, Some(UserId(0)), 2).unwrap();
        // two unfilled slots come back at once; slot and remainder stay held
        assert_eq!(w.bal(0), 166);
        w.market.audit(&w.ledger).unwrap();
        let h = handle(&mut w, 1);
        w.market
            .submit_review(&mut w.ledger, AssignmentId(0), UserId(1), h, full(), &long_text(), 3)
            .unwrap();
        assert_eq!(w.bal(0), 167);
        assert_eq!(w.bal(1), 33);
    }

    #[test]
    fn sweep_defaults_overdue_assignments() {
        let mut w = world(2, 200);
        let b = w.post(60, 2).unwrap();
        w.bid(b, 1, 30, 1).unwrap();
        w.bid(b, 2, 30, 1).unwrap();
        w.market.match_reviewers(&mut w.ledger, &w.identity, b, Some(UserId(0)), 2).unwrap();
        assert!(w.market.default_overdue(&mut w.ledger, b, 110).unwrap().is_empty());
        assert_eq!(w.market.default_overdue(&mut w.ledger, b, 111).unwrap().len(), 2);
        assert_eq!(w.bal(0), 200);
        assert_eq!(w.market.bounty(b).unwrap().state, BountyState::Fulfilled);
    }

    #[test]
    fn meta_review_rules() {
        let mut w = world(2, 200);
        let b = w.post(30, 1).unwrap();
        w.bid(b, 1, 30, 1).unwrap();
        w.market.match_reviewers(&mut w.ledger, &w.identity, b, Some(UserId(0)), 2).unwrap();
        let h = handle(&mut w, 1);
        w.market
            .submit_review(&mut w.ledger, AssignmentId(0), UserId(1), h, full(), &long_text(), 3)
            .unwrap();
        let r = ReviewId(0);
        assert_eq!(w.market.submit_meta_review(r, UserId(1), 5, 4).unwrap_err(), ReviewError::SelfMetaReview);
        w.market.submit_meta_review(r, UserId(2), 5, 4).unwrap();
        assert_eq!(w.market.submit_meta_review(r, UserId(2), 4, 4).unwrap_err().code(), "DUPLICATE");
        assert_eq!(w.market.submit_meta_review(r, UserId(0), 6, 4).unwrap_err().code(), "OUT_OF_RANGE");
    }

    #[derive(Debug, Clone)]
    enum Step {
        Bid(u64, Credits),
        Match(Tick),
        Review(usize, Tick),
        Sweep(Tick),
    }

    fn step() -> impl Strategy<Value = Step> {
        prop_oneof![
            (1u64..6, 1u64..40).prop_map(|(u, a)| Step::Bid(u, a)),
            (0u64..20).prop_map(Step::Match),
            (0usize..4, 0u64..150).prop_map(|(i, t)| Step::Review(i, t)),
            (0u64..150).prop_map(Step::Sweep),
        ]
    }

    proptest! {
        #[test]
        fn escrow_always_balances(
            reward in 1u64..200,
            slots in 1u32..4,
            steps in prop::collection::vec(step(), 0..30),
        ) {
            prop_assume!(Credits::from(slots) <= reward);
            let mut w = world(5, 500);
            let b = w.post(reward, slots).unwrap();
            let h: Vec<Pseudonym> = (0..6).map(|u| handle(&mut w, u)).collect();
            let mut prev = BountyState::Open;
            for s in steps {
                match s {
                    Step::Bid(u, ask) => { let _ = w.bid(b, u, ask, 1); }
                    Step::Match(t) => {
                        let _ = w.market.match_reviewers(&mut w.ledger, &w.identity, b, Some(UserId(0)), t);
                    }
                    Step::Review(i, t) => {
                        if let Some(a) = w.market.assignments().get(i).cloned() {
                            let _ = w.market.submit_review(
                                &mut w.ledger, a.assignment_id, a.reviewer,
                                h[a.reviewer.0 as usize].clone(), full(), &long_text(), t,
                            );
                        }
                    }
                    Step::Sweep(t) => { let _ = w.market.default_overdue(&mut w.ledger, b, t); }
                }
                let state = w.market.bounty(b).unwrap().state;
                let allowed = matches!(
                    (prev, state),
                    (x, y) if x == y
                ) || matches!(
                    (prev, state),
                    (BountyState::Open, BountyState::Matched)
                        | (BountyState::Open, BountyState::Expired)
                        | (BountyState::Matched, BountyState::Fulfilled)
                );
                prop_assert!(allowed, "{:?} -> {:?}", prev, state);
                prev = state;
                prop_assert!(w.market.audit(&w.ledger).is_ok(), "{:?}", w.market.audit(&w.ledger));
                prop_assert!(w.ledger.balance_sheet().conserves());
            }
            let paid: Credits = (1..6).map(|u| w.bal(u)).sum();
            let held: Credits = w.ledger.balance(ESCROW_POOL).unwrap();
            prop_assert_eq!(w.bal(0) + paid + held, 500);
        }

        #[test]
        fn dropping_a_loser_keeps_the_selection(
            scores in prop::collection::vec((0u8..5, 0u64..4), 1..12),
            slots in 1usize..5,
            drop in any::<prop::sample::Index>(),
        ) {
            let cands: Vec<Candidate> = scores.iter().enumerate().map(|(i, &(s, t))| Candidate {
                bid_id: BidId(i as u64),
                reviewer: UserId(i as u64),
                placed_at: t,
                score: f64::from(s) / 4.0,
            }).collect();
            let first = select_top(cands.clone(), slots);
            prop_assert_eq!(&first, &select_top(cands.clone(), slots));
            let mut reversed = cands.clone();
            reversed.reverse();
            prop_assert_eq!(&first, &select_top(reversed, slots));
            let losers: Vec<BidId> = cands.iter().map(|c| c.bid_id)
                .filter(|id| !first.iter().any(|f| f.bid_id == *id)).collect();
            if !losers.is_empty() {
                let gone = losers[drop.index(losers.len())];
                let fewer: Vec<Candidate> = cands.into_iter().filter(|c| c.bid_id != gone).collect();
                prop_assert_eq!(&first, &select_top(fewer, slots));
            }
        }
    }
}
