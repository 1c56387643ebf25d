use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::config::PlatformConfig;
use crate::engagement::{RatingSummary, ReactionTarget, ReactionToggle, Comment, RatingBallot, Thread};
use crate::identity::{ReviewerLicense, Role, UnmaskRecord, User};
use crate::ids::{
    AccountId, AnchorId, AssignmentId, BountyId, CommentId, Credits, FragmentId, MarketId, PaperId,
    ReviewId, ThreadId, Tick, UserId,
};
use crate::ledger::{RewardStatement, Transaction};
use crate::moderation::{ActionKind, Flag, FlagReason, ModerationAction, ModerationScore, ModerationTarget};
use crate::paper_store::{Anchor, ContentInput, Fragment, FragmentKind, FragmentLink, LinkParent, Paper, PaperStatus, Span};
use crate::prediction_market::{Market, PayoutSchedule, Side, Stake};
use crate::review_market::{Assignment, Bid, Bounty, MatchOutcome, MetaReview, Review, ReviewOutcome};
use crate::scores::ScoreInput;

/// Every state change the platform accepts. Commands are what the event log
/// stores, so applying the same sequence always rebuilds the same state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Command {
    /// First record of every log.
    Genesis { config: Box<PlatformConfig> },
    AdvanceClock { ticks: Tick },
    RegisterUser {
        display_name: String,
        #[serde(default)]
        expertise: Vec<String>,
        #[serde(default)]
        role: Option<Role>,
    },
    AssignRole { user: UserId, role: Role },
    GrantLicense { user: UserId, fields: Vec<String>, exam_score: u8 },
    RevokeLicense { user: UserId },
    AppointModerator { user: UserId, moderator: bool },
    GrantCredits { user: UserId, amount: Credits },
    PurchaseVip { user: UserId },
    SubmitPaper { title: String, authors: Vec<UserId> },
    SetPaperStatus { paper: PaperId, by: UserId, status: PaperStatus },
    ImportPaper {
        #[serde(with = "crate::b64")]
        archive: Vec<u8>,
    },
    AddFragment { paper: PaperId, by: UserId, kind: FragmentKind, content: ContentInput },
    ReviseFragment { fragment: FragmentId, by: UserId, content: ContentInput },
    LinkFragment {
        parent: LinkParent,
        child: FragmentId,
        #[serde(default)]
        order_index: i64,
        by: UserId,
    },
    CreateAnchor {
        fragment: FragmentId,
        revision: u32,
        #[serde(default)]
        span: Option<Span>,
    },
    PostBounty {
        paper: PaperId,
        poster: UserId,
        reward: Credits,
        #[serde(default)]
        required_fields: Vec<String>,
        slots: u32,
        deadline: Tick,
    },
    PlaceBid { bounty: BountyId, reviewer: UserId, ask: Credits },
    MatchReviewers {
        bounty: BountyId,
        #[serde(default)]
        by: Option<UserId>,
    },
    SubmitReview { assignment: AssignmentId, reviewer: UserId, scores: ScoreInput, text: String },
    DefaultOverdue { bounty: BountyId },
    SubmitMetaReview { review: ReviewId, rater: UserId, quality: u8 },
    CastRating {
        paper: PaperId,
        rater: UserId,
        scores: ScoreInput,
        #[serde(default)]
        incognito: bool,
    },
    OpenThread { anchor: AnchorId },
    PostComment {
        thread: ThreadId,
        #[serde(default)]
        parent: Option<CommentId>,
        author: UserId,
        text: String,
        #[serde(default)]
        incognito: bool,
    },
    React {
        target: ReactionTarget,
        reactor: UserId,
        emoji: String,
        #[serde(default)]
        incognito: bool,
    },
    OpenMarket {
        paper: PaperId,
        venue: String,
        close_time: Tick,
        #[serde(default)]
        fee_bps: Option<u32>,
    },
    PlaceStake { market: MarketId, staker: UserId, side: Side, amount: Credits },
    ResolveMarket { market: MarketId, outcome: Side },
    SettleEpoch {
        #[serde(default)]
        epoch: Option<u64>,
    },
    FlagContent { target: ModerationTarget, flagger: UserId, reason: FlagReason },
    ModeratorOverride { target: ModerationTarget, moderator: UserId, kind: ActionKind },
    UnmaskPseudonym { pseudonym: String, moderator: UserId },
}

impl Command {
    /// Event name recorded in the log.
    pub fn kind(&self) -> &'static str {
        match self {
            Command::Genesis { .. } => "GENESIS",
            Command::AdvanceClock { .. } => "CLOCK_ADVANCED",
            Command::RegisterUser { .. } => "USER_REGISTERED",
            Command::AssignRole { .. } => "ROLE_ASSIGNED",
            Command::GrantLicense { .. } => "LICENSE_GRANTED",
            Command::RevokeLicense { .. } => "LICENSE_REVOKED",
            Command::AppointModerator { .. } => "MODERATOR_APPOINTED",
            Command::GrantCredits { .. } => "CREDITS_GRANTED",
            Command::PurchaseVip { .. } => "VIP_PURCHASED",
            Command::SubmitPaper { .. } => "PAPER_SUBMITTED",
            Command::SetPaperStatus { .. } => "PAPER_STATUS_SET",
            Command::ImportPaper { .. } => "PAPER_IMPORTED",
            Command::AddFragment { .. } => "FRAGMENT_ADDED",
            Command::ReviseFragment { .. } => "FRAGMENT_REVISED",
            Command::LinkFragment { .. } => "FRAGMENT_LINKED",
            Command::CreateAnchor { .. } => "ANCHOR_CREATED",
            Command::PostBounty { .. } => "BOUNTY_POSTED",
            Command::PlaceBid { .. } => "BID_PLACED",
            Command::MatchReviewers { .. } => "REVIEWERS_MATCHED",
            Command::SubmitReview { .. } => "REVIEW_SUBMITTED",
            Command::DefaultOverdue { .. } => "OVERDUE_DEFAULTED",
            Command::SubmitMetaReview { .. } => "META_REVIEW_SUBMITTED",
            Command::CastRating { .. } => "RATING_CAST",
            Command::OpenThread { .. } => "THREAD_OPENED",
            Command::PostComment { .. } => "COMMENT_POSTED",
            Command::React { .. } => "REACTION_TOGGLED",
            Command::OpenMarket { .. } => "MARKET_OPENED",
            Command::PlaceStake { .. } => "STAKE_PLACED",
            Command::ResolveMarket { .. } => "MARKET_RESOLVED",
            Command::SettleEpoch { .. } => "EPOCH_SETTLED",
            Command::FlagContent { .. } => "CONTENT_FLAGGED",
            Command::ModeratorOverride { .. } => "MODERATION_OVERRIDDEN",
            Command::UnmaskPseudonym { .. } => "PSEUDONYM_UNMASKED",
        }
    }
}

/// What a successfully applied command produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Genesis,
    Clock { now: Tick },
    User { user: User, account: AccountId },
    License { license: ReviewerLicense },
    Credits { txn: Transaction },
    Paper { paper: Paper },
    Fragment { fragment: Fragment },
    Link { link: FragmentLink },
    Anchor { anchor: Anchor },
    Bounty { bounty: Bounty },
    Bid { bid: Bid },
    Matched { bounty: BountyId, result: MatchOutcome, assignments: Vec<Assignment> },
    Review { result: ReviewOutcome, review: Option<Review> },
    Defaulted { bounty: BountyId, assignments: Vec<AssignmentId> },
    MetaReview { meta_review: MetaReview, reviewer_reputation: f64 },
    Rating { ballot: RatingBallot, summary: RatingSummary },
    Thread { thread: Thread },
    Comment { comment: Comment, moderation: ActionKind },
    Reaction { reaction: ReactionToggle },
    Market { market: Market },
    Stake { stake: Stake },
    Resolved { schedule: PayoutSchedule },
    Settled { epoch: u64, statements: Vec<RewardStatement> },
    Flagged { flag: Flag, score: ModerationScore, status: ActionKind },
    Moderated { action: ModerationAction },
    Unmasked { record: UnmaskRecord },
}

impl Outcome {
    /// Error code for commands that changed state but did not achieve what
    /// was asked: matching without bids and reviews past the deadline.
    pub fn soft_code(&self) -> Option<&'static str> {
        match self {
            Outcome::Matched { result: MatchOutcome::Expired, .. } => Some("NO_BIDS"),
            Outcome::Review { result: ReviewOutcome::DeadlinePassed { .. }, .. } => Some("DEADLINE_PASSED"),
            _ => None,
        }
    }
}

pub(crate) fn topics(v: &[String]) -> BTreeSet<String> {
    crate::identity::normalize_topics(v.iter().cloned())
}
