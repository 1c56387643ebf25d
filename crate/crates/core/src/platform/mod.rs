//! The platform state machine: every module behind one `execute` entry point.

mod command;
mod invariants;
mod replay;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, PlatformConfig};
use crate::engagement::{
    visibility_score, Engagement, EngagementError, ReactionTarget, VisibilityInputs,
};
use crate::identity::{Identity, IdentityError, Role};
use crate::ids::{AccountId, Credits, PaperId, Tick, UserId};
use crate::ledger::{ActivityKind, Ledger, LedgerError, Owner, Transaction, TxnKind, TREASURY};
use crate::moderation::{
    ActionKind, ContentScorer, Moderation, ModerationError, ModerationTarget, RuleScorer,
};
use crate::paper_store::{archive, PaperError, PaperStore};
use crate::prediction_market::{MarketError, PredictionMarkets};
use crate::review_market::{ReviewError, ReviewMarket, ReviewOutcome};

pub use command::{Command, Outcome};
pub use invariants::{InvariantCheck, INVARIANTS};
pub use replay::{replay, EventRecord, ReplayError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlatformError {
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error(transparent)]
    Paper(#[from] PaperError),
    #[error(transparent)]
    Review(#[from] ReviewError),
    #[error(transparent)]
    Engagement(#[from] EngagementError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Moderation(#[from] ModerationError),
    #[error("genesis is only valid as the first event")]
    GenesisNotFirst,
    #[error("{0}")]
    Validation(String),
}

impl PlatformError {
    pub fn code(&self) -> &'static str {
        match self {
            PlatformError::Ledger(e) => e.code(),
            PlatformError::Identity(e) => e.code(),
            PlatformError::Paper(e) => e.code(),
            PlatformError::Review(e) => e.code(),
            PlatformError::Engagement(e) => e.code(),
            PlatformError::Market(e) => e.code(),
            PlatformError::Moderation(e) => e.code(),
            PlatformError::GenesisNotFirst | PlatformError::Validation(_) => "VALIDATION_ERROR",
        }
    }
}

type Result<T, E = PlatformError> = std::result::Result<T, E>;

/// Credits taken from a reviewer whose review was hidden, returned on appeal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Forfeit {
    pub account: AccountId,
    pub amount: Credits,
}

/// Everything the platform knows. Serializable as a snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    /// Commands applied since genesis.
    pub events: u64,
    pub now: Tick,
    pub ledger: Ledger,
    pub identity: Identity,
    pub papers: PaperStore,
    pub reviews: ReviewMarket,
    pub engagement: Engagement,
    pub markets: PredictionMarkets,
    pub moderation: Moderation,
    pub forfeits: BTreeMap<ModerationTarget, Forfeit>,
}

impl State {
    fn new(config: &PlatformConfig) -> Self {
        Self {
            events: 0,
            now: 0,
            ledger: Ledger::genesis(config.ledger.clone(), 0),
            identity: Identity::new(config.identity.clone()),
            papers: PaperStore::new(config.paper.clone()),
            reviews: ReviewMarket::new(config.review.clone()),
            engagement: Engagement::new(config.engagement.clone()),
            markets: PredictionMarkets::new(config.market.clone()),
            moderation: Moderation::new(config.moderation.clone()),
            forfeits: BTreeMap::new(),
        }
    }
}

/// A command's outcome plus the ledger postings it caused.
#[derive(Debug, Clone, PartialEq)]
pub struct Applied {
    pub outcome: Outcome,
    pub effects: Vec<Transaction>,
}

pub struct Platform {
    config: PlatformConfig,
    state: State,
    scorer: Box<dyn ContentScorer>,
}

impl fmt::Debug for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Platform")
            .field("now", &self.state.now)
            .field("users", &self.state.identity.users().len())
            .field("transactions", &self.state.ledger.transactions().len())
            .finish_non_exhaustive()
    }
}

impl Platform {
    pub fn new(config: PlatformConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let state = State::new(&config);
        let scorer = Box::new(RuleScorer::new(&config.moderation));
        Ok(Self { config, state, scorer })
    }

    /// Restores a snapshot. The pseudonym key is not part of snapshots and
    /// comes from `config`.
    pub fn from_state(config: PlatformConfig, mut state: State) -> Result<Self, ConfigError> {
        config.validate()?;
        state.identity.set_pseudonym_key(config.identity.pseudonym_key.clone());
        let scorer = Box::new(RuleScorer::new(&config.moderation));
        Ok(Self { config, state, scorer })
    }

    /// Replaces the moderation scorer.
    pub fn with_scorer(mut self, scorer: Box<dyn ContentScorer>) -> Self {
        self.scorer = scorer;
        self
    }

    pub fn config(&self) -> &PlatformConfig {
        &self.config
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn now(&self) -> Tick {
        self.state.now
    }

    /// The log's first command: this platform's config without its key.
    pub fn genesis_command(&self) -> Command {
        let mut config = self.config.clone();
        config.identity.pseudonym_key.clear();
        Command::Genesis { config: Box::new(config) }
    }

    pub fn account_of(&self, user: UserId) -> Result<AccountId> {
        self.state.identity.user(user)?;
        self.state
            .ledger
            .account_of(user)
            .ok_or(PlatformError::Ledger(LedgerError::UnknownAccount(AccountId(u64::MAX))))
    }

    pub fn balance_of(&self, user: UserId) -> Result<Credits> {
        Ok(self.state.ledger.balance(self.account_of(user)?)?)
    }

    pub fn visibility_inputs(&self, paper: PaperId) -> VisibilityInputs {
        let s = &self.state;
        let delivered = s
            .reviews
            .reviews()
            .iter()
            .filter(|r| r.paper_id == paper)
            .filter(|r| s.moderation.status(ModerationTarget::Review(r.review_id)) != ActionKind::Hide)
            .count();
        VisibilityInputs {
            mean_rating: s.engagement.summarize_ratings(paper).overall(),
            delivered_reviews: delivered,
            distinct_commenters: s.engagement.distinct_commenters(paper),
        }
    }

    pub fn visibility(&self, paper: PaperId) -> f64 {
        visibility_score(&self.visibility_inputs(paper), &self.config.engagement.visibility)
    }

    /// Papers by visibility score, highest first, ties by paper id.
    pub fn ranked_papers(&self) -> Vec<(PaperId, f64)> {
        let mut ranked: Vec<(PaperId, f64)> = self
            .state
            .papers
            .papers()
            .iter()
            .map(|p| (p.paper_id, self.visibility(p.paper_id)))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked
    }

    /// Text a moderation target carries, if the target exists.
    pub fn target_text(&self, target: ModerationTarget) -> Result<&str> {
        let text = match target {
            ModerationTarget::Comment(c) => {
                self.state.engagement.comment(c).map(|c| c.text.as_str()).ok()
            }
            ModerationTarget::Review(r) => self.state.reviews.review(r).map(|r| r.text.as_str()).ok(),
        };
        text.ok_or(PlatformError::Moderation(ModerationError::UnknownTarget(target)))
    }

    pub fn score_target(&self, target: ModerationTarget) -> Result<crate::moderation::ModerationScore> {
        let text = self.target_text(target)?;
        Ok(self.state.moderation.score_content(target, text, self.scorer.as_ref()))
    }

    /// Applies a command. On error nothing has changed.
    pub fn execute(&mut self, command: &Command) -> Result<Applied> {
        let before = self.state.ledger.transactions().len();
        let outcome = self.apply(command)?;
        self.state.events += 1;
        let effects = self.state.ledger.transactions()[before..].to_vec();
        Ok(Applied { outcome, effects })
    }

    fn activity(&mut self, account: AccountId, kind: ActivityKind) -> Result<()> {
        match self.state.ledger.record_activity(account, kind) {
            // kinds without a configured weight simply do not count
            Err(LedgerError::UnknownEventKind(_)) => return Ok(()),
            other => other?,
        };
        self.state.ledger.evaluate_achievements(account)?;
        Ok(())
    }

    fn is_author(&self, paper: PaperId, user: UserId) -> Result<bool> {
        Ok(self.state.papers.paper(paper)?.is_author(user))
    }

    fn apply(&mut self, command: &Command) -> Result<Outcome> {
        let now = self.state.now;
        match command {
            Command::Genesis { .. } => Err(PlatformError::GenesisNotFirst),
            Command::AdvanceClock { ticks } => {
                self.state.now = now
                    .checked_add(*ticks)
                    .ok_or_else(|| PlatformError::Validation("clock overflow".into()))?;
                Ok(Outcome::Clock { now: self.state.now })
            }
            Command::RegisterUser { display_name, expertise, role } => {
                let grant = self.config.ledger.signup_grant;
                let available = self.state.ledger.balance(TREASURY)?;
                if grant > available {
                    return Err(LedgerError::TreasuryExhausted { available, needed: grant }.into());
                }
                let s = &mut self.state;
                let user = s.identity.register_user(display_name, expertise.iter().cloned(), now)?.user_id;
                if let Some(role) = role {
                    s.identity.assign_role(user, *role)?;
                }
                let account = s.ledger.open_account(Owner::User(user), now)?;
                if grant > 0 {
                    s.ledger.post_transaction(TREASURY, account, grant, TxnKind::DirectReward, "signup")?;
                }
                Ok(Outcome::User { user: s.identity.user(user)?.clone(), account })
            }
            Command::AssignRole { user, role } => {
                let user = self.state.identity.assign_role(*user, *role)?.clone();
                let account = self.account_of(user.user_id)?;
                Ok(Outcome::User { user, account })
            }
            Command::GrantLicense { user, fields, exam_score } => {
                let license = self.state.identity.grant_license(*user, fields.iter().cloned(), *exam_score, now)?;
                Ok(Outcome::License { license: license.clone() })
            }
            Command::RevokeLicense { user } => {
                let license = self.state.identity.revoke_license(*user)?;
                Ok(Outcome::License { license: license.clone() })
            }
            Command::AppointModerator { user, moderator } => {
                let user = self.state.identity.set_moderator(*user, *moderator)?.clone();
                let account = self.account_of(user.user_id)?;
                Ok(Outcome::User { user, account })
            }
            Command::GrantCredits { user, amount } => {
                let account = self.account_of(*user)?;
                let txn = self.state.ledger.post_transaction(TREASURY, account, *amount, TxnKind::DirectReward, "grant")?;
                Ok(Outcome::Credits { txn })
            }
            Command::PurchaseVip { user } => {
                let account = self.account_of(*user)?;
                let txn = self.state.ledger.purchase_vip(account)?;
                Ok(Outcome::Credits { txn })
            }
            Command::SubmitPaper { title, authors } => {
                for &a in authors {
                    self.state.identity.user(a)?;
                }
                let paper = self.state.papers.submit_paper(title, authors, now)?;
                Ok(Outcome::Paper { paper: paper.clone() })
            }
            Command::SetPaperStatus { paper, by, status } => {
                self.state.papers.require_author(*paper, *by)?;
                let paper = self.state.papers.set_status(*paper, *status)?;
                Ok(Outcome::Paper { paper: paper.clone() })
            }
            Command::ImportPaper { archive: bytes } => {
                let manifest = archive::read_manifest(bytes)?;
                for &a in &manifest.authors {
                    self.state.identity.user(a)?;
                }
                let paper = archive::import_paper(&mut self.state.papers, bytes, now)?;
                Ok(Outcome::Paper { paper: self.state.papers.paper(paper)?.clone() })
            }
            Command::AddFragment { paper, by, kind, content } => {
                self.state.papers.require_author(*paper, *by)?;
                let account = self.account_of(*by)?;
                let fragment = self.state.papers.add_fragment(*paper, *kind, content.clone(), now)?.clone();
                self.activity(account, ActivityKind::FragmentPublished)?;
                Ok(Outcome::Fragment { fragment })
            }
            Command::ReviseFragment { fragment, by, content } => {
                let paper = self.state.papers.fragment(*fragment)?.paper_id;
                self.state.papers.require_author(paper, *by)?;
                let fragment = self.state.papers.revise_fragment(*fragment, content.clone(), now)?;
                Ok(Outcome::Fragment { fragment: fragment.clone() })
            }
            Command::LinkFragment { parent, child, order_index, by } => {
                let paper = self.state.papers.fragment(*child)?.paper_id;
                self.state.papers.require_author(paper, *by)?;
                let link = self.state.papers.link_fragment(*parent, *child, *order_index)?;
                Ok(Outcome::Link { link: link.clone() })
            }
            Command::CreateAnchor { fragment, revision, span } => {
                let anchor = self.state.papers.create_anchor(*fragment, *revision, *span)?;
                Ok(Outcome::Anchor { anchor: anchor.clone() })
            }
            Command::PostBounty { paper, poster, reward, required_fields, slots, deadline } => {
                self.state.papers.paper(*paper)?;
                let account = self.account_of(*poster)?;
                let s = &mut self.state;
                let bounty = s.reviews.post_bounty(
                    &mut s.ledger,
                    *paper,
                    *poster,
                    account,
                    *reward,
                    command::topics(required_fields),
                    *slots,
                    *deadline,
                    now,
                )?;
                Ok(Outcome::Bounty { bounty: bounty.clone() })
            }
            Command::PlaceBid { bounty, reviewer, ask } => {
                let paper = self.state.reviews.bounty(*bounty)?.paper_id;
                let account = self.account_of(*reviewer)?;
                let is_author = self.is_author(paper, *reviewer)?;
                let s = &mut self.state;
                let license = s.identity.active_license(*reviewer);
                let bid = s.reviews.place_bid(*bounty, *reviewer, account, *ask, is_author, license, now)?;
                Ok(Outcome::Bid { bid: bid.clone() })
            }
            Command::MatchReviewers { bounty, by } => {
                if let Some(u) = by {
                    self.state.identity.user(*u)?;
                }
                let s = &mut self.state;
                let result = s.reviews.match_reviewers(&mut s.ledger, &s.identity, *bounty, *by, now)?;
                let assignments = s.reviews.assignments_of(*bounty).cloned().collect();
                Ok(Outcome::Matched { bounty: *bounty, result, assignments })
            }
            Command::SubmitReview { assignment, reviewer, scores, text } => {
                let bounty = self.state.reviews.assignment(*assignment)?.bounty_id;
                let paper = self.state.reviews.bounty(bounty)?.paper_id;
                let handle = self.state.identity.peek_pseudonym(*reviewer, paper)?;
                let s = &mut self.state;
                let result =
                    s.reviews.submit_review(&mut s.ledger, *assignment, *reviewer, handle, *scores, text, now)?;
                let review = match &result {
                    ReviewOutcome::Delivered { review_id } => {
                        self.state.identity.pseudonym_for(*reviewer, paper)?;
                        let account = self.account_of(*reviewer)?;
                        self.activity(account, ActivityKind::ReviewSubmitted)?;
                        Some(self.state.reviews.review(*review_id)?.clone())
                    }
                    ReviewOutcome::DeadlinePassed { .. } => None,
                };
                Ok(Outcome::Review { result, review })
            }
            Command::DefaultOverdue { bounty } => {
                let s = &mut self.state;
                let assignments = s.reviews.default_overdue(&mut s.ledger, *bounty, now)?;
                Ok(Outcome::Defaulted { bounty: *bounty, assignments })
            }
            Command::SubmitMetaReview { review, rater, quality } => {
                let account = self.account_of(*rater)?;
                let meta = self.state.reviews.submit_meta_review(*review, *rater, *quality, now)?.clone();
                let reviewer = self.state.reviews.review(*review)?.reviewer;
                let reputation = self.state.identity.update_reputation(reviewer, *quality)?.reputation;
                self.activity(account, ActivityKind::MetaReviewSubmitted)?;
                Ok(Outcome::MetaReview { meta_review: meta, reviewer_reputation: reputation })
            }
            Command::CastRating { paper, rater, scores, incognito } => {
                let is_author = self.is_author(*paper, *rater)?;
                let account = self.account_of(*rater)?;
                let handle = self.state.identity.peek_handle(*rater, *paper, *incognito)?;
                let (ballot, first) =
                    self.state.engagement.cast_rating(*paper, *rater, handle, *scores, is_author, now)?;
                let ballot = ballot.clone();
                self.state.identity.handle_for(*rater, *paper, *incognito)?;
                if first {
                    self.activity(account, ActivityKind::RatingCast)?;
                }
                let summary = self.state.engagement.summarize_ratings(*paper);
                Ok(Outcome::Rating { ballot, summary })
            }
            Command::OpenThread { anchor } => {
                let paper = self.state.papers.resolve_anchor(*anchor)?.paper_id;
                let thread = self.state.engagement.open_thread(*anchor, paper, now);
                Ok(Outcome::Thread { thread: thread.clone() })
            }
            Command::PostComment { thread, parent, author, text, incognito } => {
                let paper = self.state.engagement.thread(*thread)?.paper_id;
                let account = self.account_of(*author)?;
                let handle = self.state.identity.peek_handle(*author, paper, *incognito)?;
                let id = self
                    .state
                    .engagement
                    .post_comment(*thread, *parent, *author, handle, text, now)?
                    .comment_id;
                self.state.identity.handle_for(*author, paper, *incognito)?;
                self.activity(account, ActivityKind::CommentPosted)?;
                let moderation = self.moderate(ModerationTarget::Comment(id))?;
                let comment = self.state.engagement.comment(id)?.clone();
                Ok(Outcome::Comment { comment, moderation })
            }
            Command::React { target, reactor, emoji, incognito } => {
                let paper = match target {
                    ReactionTarget::Fragment(f) => self.state.papers.fragment(*f)?.paper_id,
                    ReactionTarget::Comment(c) => {
                        let thread = self.state.engagement.comment(*c)?.thread_id;
                        self.state.engagement.thread(thread)?.paper_id
                    }
                };
                let account = self.account_of(*reactor)?;
                let handle = self.state.identity.peek_handle(*reactor, paper, *incognito)?;
                let reaction = self.state.engagement.react(*target, *reactor, handle, emoji)?;
                self.state.identity.handle_for(*reactor, paper, *incognito)?;
                if reaction.added {
                    self.activity(account, ActivityKind::Reaction)?;
                }
                Ok(Outcome::Reaction { reaction })
            }
            Command::OpenMarket { paper, venue, close_time, fee_bps } => {
                self.state.papers.paper(*paper)?;
                let market = self.state.markets.open_market(*paper, venue, *close_time, *fee_bps, now)?;
                Ok(Outcome::Market { market: market.clone() })
            }
            Command::PlaceStake { market, staker, side, amount } => {
                let paper = self.state.markets.market(*market)?.paper_id;
                let is_author = self.is_author(paper, *staker)?;
                let account = self.account_of(*staker)?;
                let s = &mut self.state;
                let stake = s
                    .markets
                    .place_stake(&mut s.ledger, *market, *staker, account, is_author, *side, *amount, now)?
                    .clone();
                self.activity(account, ActivityKind::StakePlaced)?;
                Ok(Outcome::Stake { stake })
            }
            Command::ResolveMarket { market, outcome } => {
                let s = &mut self.state;
                let schedule = s.markets.resolve_market(&mut s.ledger, *market, *outcome, now)?;
                Ok(Outcome::Resolved { schedule: schedule.clone() })
            }
            Command::SettleEpoch { epoch } => {
                let s = &mut self.state;
                let epoch = epoch.unwrap_or_else(|| s.ledger.epoch());
                let roles: BTreeMap<AccountId, Role> = s
                    .ledger
                    .accounts()
                    .iter()
                    .filter_map(|a| match a.owner {
                        Owner::User(u) => s.identity.user(u).ok().map(|u| (a.id, u.role)),
                        _ => None,
                    })
                    .collect();
                let statements = s
                    .ledger
                    .settle_epoch(epoch, |a| roles.get(&a).copied().unwrap_or_default())?;
                Ok(Outcome::Settled { epoch, statements })
            }
            Command::FlagContent { target, flagger, reason } => {
                self.target_text(*target)?;
                self.state.identity.user(*flagger)?;
                let flag = self.state.moderation.flag_content(*target, *flagger, *reason, now)?.clone();
                let status = self.moderate(*target)?;
                let score = self.score_target(*target)?;
                Ok(Outcome::Flagged { flag, score, status })
            }
            Command::ModeratorOverride { target, moderator, kind } => {
                self.state.identity.require_moderator(*moderator)?;
                self.target_text(*target)?;
                let previous = self.state.moderation.status(*target);
                self.check_enactable(*target, previous, *kind)?;
                let action = self.state.moderation.override_action(*target, *kind, *moderator, now).clone();
                self.enact(*target, previous, *kind)?;
                Ok(Outcome::Moderated { action })
            }
            Command::UnmaskPseudonym { pseudonym, moderator } => {
                let record = self.state.identity.unmask(pseudonym, *moderator, now)?;
                Ok(Outcome::Unmasked { record })
            }
        }
    }

    /// Rescores a target and applies the threshold table.
    fn moderate(&mut self, target: ModerationTarget) -> Result<ActionKind> {
        let score = self.score_target(target)?;
        let previous = self.state.moderation.status(target);
        let decided = self
            .state
            .moderation
            .apply_policy(&score, self.state.now)
            .map(|a| a.kind);
        if let Some(kind) = decided {
            self.enact(target, previous, kind)?;
        }
        Ok(self.state.moderation.status(target))
    }

    fn check_enactable(&self, target: ModerationTarget, previous: ActionKind, kind: ActionKind) -> Result<()> {
        if previous == ActionKind::Hide && kind == ActionKind::None {
            if let Some(f) = self.state.forfeits.get(&target) {
                let available = self.state.ledger.balance(TREASURY)?;
                if available < f.amount {
                    return Err(LedgerError::TreasuryExhausted { available, needed: f.amount }.into());
                }
            }
        }
        Ok(())
    }

    /// Carries out a moderation decision: tombstones, forfeits and refunds.
    fn enact(&mut self, target: ModerationTarget, previous: ActionKind, kind: ActionKind) -> Result<()> {
        let hidden = kind == ActionKind::Hide;
        if let ModerationTarget::Comment(c) = target {
            self.state.engagement.set_hidden(c, hidden)?;
        }
        if let ModerationTarget::Review(r) = target {
            if hidden && previous != ActionKind::Hide {
                let review = self.state.reviews.review(r)?;
                let assignment = self.state.reviews.assignment(review.assignment_id)?;
                let (account, ask) = (assignment.account, assignment.ask);
                let amount = ask.min(self.state.ledger.balance(account)?);
                if amount > 0 {
                    self.state.ledger.post_transaction(
                        account,
                        TREASURY,
                        amount,
                        TxnKind::ModerationForfeit,
                        format!("{target}"),
                    )?;
                    self.state.forfeits.insert(target, Forfeit { account, amount });
                }
            }
        }
        if previous == ActionKind::Hide && kind == ActionKind::None {
            if let Some(f) = self.state.forfeits.remove(&target) {
                self.state.ledger.post_transaction(
                    TREASURY,
                    f.account,
                    f.amount,
                    TxnKind::ModerationRefund,
                    format!("{target}:appeal"),
                )?;
            }
        }
        Ok(())
    }
}
