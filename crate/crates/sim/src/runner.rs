//! The seeded agent loop.

use panvas_core::engagement::ReactionTarget;
use panvas_core::identity::Role;
use panvas_core::ids::{CommentId, FragmentId, PaperId, UserId};
use panvas_core::paper_store::{ContentInput, FragmentKind, LinkParent};
use panvas_core::platform::State;
use panvas_core::prediction_market::{MarketState, Side};
use panvas_core::review_market::{AssignmentState, BountyState};
use panvas_core::scores::Scores;
use panvas_core::{Command, EventRecord, Outcome, Platform, PlatformConfig};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::report::SimReport;
use crate::scenario::{Propensities, ScenarioConfig, ScenarioError};

pub const TOPICS: [&str; 6] = ["ml", "stats", "bio", "physics", "econ", "hci"];
const VENUES: [&str; 3] = ["NeurIPS", "ICML", "Nature"];
const EMOJI: [&str; 6] = ["👍", "👎", "🎉", "🤔", "❤️", "🚀"];

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("invariant {name} violated in epoch {epoch} at event {sequence}: {detail}")]
    InvariantViolation { name: String, epoch: u64, sequence: u64, detail: String },
    #[error("simulation setup failed: {0}")]
    Setup(String),
}

impl SimError {
    pub fn code(&self) -> &'static str {
        match self {
            SimError::Scenario(_) => "INVALID_CONFIG",
            SimError::InvariantViolation { .. } => "INVARIANT_VIOLATION",
            SimError::Setup(_) => "SETUP_FAILED",
        }
    }
}

#[derive(Debug, Clone)]
struct Agent {
    user: UserId,
    role: Role,
    topics: Vec<String>,
}

/// A finished run: the log plus what was derived from it.
#[derive(Debug, Clone)]
pub struct SimRun {
    pub log: Vec<EventRecord>,
    pub report: SimReport,
    /// Commands the platform refused; they leave no trace in the log.
    pub rejected: u64,
    /// Live state at the end of the run.
    pub state: State,
}

/// The platform config a scenario runs under. The pseudonym key is derived
/// from the seed so runs are reproducible.
pub fn platform_config(scenario: &ScenarioConfig) -> PlatformConfig {
    let mut config = PlatformConfig::default();
    config.ledger = scenario.ledger.clone();
    config.review.grace_ticks = scenario.review_grace_ticks;
    config.identity.pseudonym_key = hex::encode(scenario.seed.to_be_bytes().repeat(4));
    config
}

struct Sim {
    platform: Platform,
    log: Vec<EventRecord>,
    rng: ChaCha8Rng,
    rejected: u64,
}

impl Sim {
    fn exec(&mut self, command: Command) -> Option<Outcome> {
        let at = self.platform.now();
        match self.platform.execute(&command) {
            Ok(applied) => {
                let sequence = self.log.len() as u64;
                self.log.push(EventRecord::new(sequence, command, at, applied.effects));
                Some(applied.outcome)
            }
            Err(_) => {
                self.rejected += 1;
                None
            }
        }
    }

    fn chance(&mut self, p: f64) -> bool {
        p > 0.0 && self.rng.random::<f64>() < p
    }

    fn pick<T: Copy>(&mut self, items: &[T]) -> Option<T> {
        (!items.is_empty()).then(|| items[self.rng.random_range(0..items.len())])
    }

    fn scores(&mut self) -> Scores {
        Scores::new(self.rng.random_range(1..=10), self.rng.random_range(1..=10), self.rng.random_range(1..=10))
    }

    fn act(&mut self, agent: &Agent, p: &Propensities) {
        if self.chance(p.post_paper) {
            self.post_paper(agent);
        }
        if self.chance(p.post_bounty) {
            self.post_bounty(agent);
        }
        if self.chance(p.bid) {
            self.bid(agent);
        }
        if self.chance(p.review) {
            self.review(agent);
        }
        if self.chance(p.meta_review) {
            self.meta_review(agent);
        }
        if self.chance(p.rate) {
            self.rate(agent);
        }
        if self.chance(p.comment) {
            self.comment(agent);
        }
        if self.chance(p.react) {
            self.react(agent);
        }
        if self.chance(p.open_market) {
            self.open_market();
        }
        if self.chance(p.stake) {
            self.stake(agent);
        }
    }

    fn post_paper(&mut self, agent: &Agent) {
        let n = self.platform.state().papers.papers().len();
        let Some(Outcome::Paper { paper }) =
            self.exec(Command::SubmitPaper { title: format!("Paper {n}"), authors: vec![agent.user] })
        else {
            return;
        };
        let text = format!("Findings of paper {n} on {}.", agent.topics.join(" and "));
        let add = Command::AddFragment {
            paper: paper.paper_id,
            by: agent.user,
            kind: FragmentKind::Paragraph,
            content: ContentInput::Text(text),
        };
        if let Some(Outcome::Fragment { fragment }) = self.exec(add) {
            let link = Command::LinkFragment {
                parent: LinkParent::Root,
                child: fragment.fragment_id,
                order_index: 0,
                by: agent.user,
            };
            self.exec(link);
            if let Some(Outcome::Anchor { anchor }) =
                self.exec(Command::CreateAnchor { fragment: fragment.fragment_id, revision: 1, span: None })
            {
                self.exec(Command::OpenThread { anchor: anchor.anchor_id });
            }
        }
    }

    fn own_papers(&self, user: UserId) -> Vec<PaperId> {
        self.platform.state().papers.papers().iter().filter(|p| p.is_author(user)).map(|p| p.paper_id).collect()
    }

    fn all_papers(&self) -> Vec<PaperId> {
        self.platform.state().papers.papers().iter().map(|p| p.paper_id).collect()
    }

    fn post_bounty(&mut self, agent: &Agent) {
        let mine = self.own_papers(agent.user);
        let Some(paper) = self.pick(&mine) else { return };
        let field = TOPICS[self.rng.random_range(0..TOPICS.len())].to_string();
        let command = Command::PostBounty {
            paper,
            poster: agent.user,
            reward: self.rng.random_range(20..=100),
            required_fields: vec![field],
            slots: self.rng.random_range(1..=3),
            deadline: self.platform.now() + self.rng.random_range(2..=6),
        };
        self.exec(command);
    }

    fn bid(&mut self, agent: &Agent) {
        let now = self.platform.now();
        let open: Vec<_> = self
            .platform
            .state()
            .reviews
            .bounties()
            .iter()
            .filter(|b| b.state == BountyState::Open && now < b.deadline)
            .map(|b| (b.bounty_id, b.per_slot))
            .collect();
        let Some((bounty, per_slot)) = self.pick(&open) else { return };
        let ask = self.rng.random_range(1..=per_slot.max(1));
        self.exec(Command::PlaceBid { bounty, reviewer: agent.user, ask });
    }

    fn review(&mut self, agent: &Agent) {
        let pending = self
            .platform
            .state()
            .reviews
            .assignments()
            .iter()
            .find(|a| a.reviewer == agent.user && a.state == AssignmentState::Assigned)
            .map(|a| a.assignment_id);
        let Some(assignment) = pending else { return };
        let scores = self.scores();
        let text = format!("Assessment {assignment}. ").repeat(2)
            + &"The methodology is clearly described and the claims follow from the evidence. ".repeat(7);
        self.exec(Command::SubmitReview { assignment, reviewer: agent.user, scores: scores.into(), text });
    }

    fn meta_review(&mut self, agent: &Agent) {
        let reviews: Vec<_> = self
            .platform
            .state()
            .reviews
            .reviews()
            .iter()
            .filter(|r| r.reviewer != agent.user)
            .map(|r| r.review_id)
            .collect();
        let Some(review) = self.pick(&reviews) else { return };
        let quality = self.rng.random_range(1..=5);
        self.exec(Command::SubmitMetaReview { review, rater: agent.user, quality });
    }

    fn rate(&mut self, agent: &Agent) {
        let papers = self.all_papers();
        let Some(paper) = self.pick(&papers) else { return };
        let scores = self.scores();
        let incognito = self.chance(0.3);
        self.exec(Command::CastRating { paper, rater: agent.user, scores: scores.into(), incognito });
    }

    fn comment(&mut self, agent: &Agent) {
        let threads: Vec<_> = self.platform.state().engagement.threads().iter().map(|t| t.thread_id).collect();
        let Some(thread) = self.pick(&threads) else { return };
        let replies: Vec<_> = self
            .platform
            .state()
            .engagement
            .comments_in(thread)
            .filter(|c| !c.hidden)
            .map(|c| c.comment_id)
            .collect();
        let parent = if self.chance(0.5) { self.pick(&replies) } else { None };
        let incognito = self.chance(0.3);
        let text = format!("Comment by {} on {thread}.", agent.user);
        self.exec(Command::PostComment { thread, parent, author: agent.user, text, incognito });
    }

    fn react(&mut self, agent: &Agent) {
        let s = self.platform.state();
        let comments = s.engagement.comments().len() as u64;
        let fragments = s.papers.papers().iter().map(|p| s.papers.fragments_of(p.paper_id).count() as u64).sum::<u64>();
        if comments + fragments == 0 {
            return;
        }
        let i = self.rng.random_range(0..comments + fragments);
        let target = if i < comments {
            ReactionTarget::Comment(CommentId(i))
        } else {
            ReactionTarget::Fragment(FragmentId(i - comments))
        };
        let emoji = EMOJI[self.rng.random_range(0..EMOJI.len())].to_string();
        let incognito = self.chance(0.3);
        self.exec(Command::React { target, reactor: agent.user, emoji, incognito });
    }

    fn open_market(&mut self) {
        let papers = self.all_papers();
        let Some(paper) = self.pick(&papers) else { return };
        let venue = VENUES[self.rng.random_range(0..VENUES.len())].to_string();
        let close_time = self.platform.now() + self.rng.random_range(2..=10);
        self.exec(Command::OpenMarket { paper, venue, close_time, fee_bps: None });
    }

    fn stake(&mut self, agent: &Agent) {
        let now = self.platform.now();
        let open: Vec<_> = self
            .platform
            .state()
            .markets
            .markets()
            .iter()
            .filter(|m| m.state_at(now) == MarketState::Open)
            .map(|m| m.market_id)
            .collect();
        let Some(market) = self.pick(&open) else { return };
        let side = if self.chance(0.5) { Side::Accept } else { Side::Reject };
        let amount = self.rng.random_range(1..=20);
        self.exec(Command::PlaceStake { market, staker: agent.user, side, amount });
    }

    /// Matching after deadlines, defaulting late reviewers, resolving
    /// closed markets.
    fn housekeeping(&mut self) {
        let now = self.platform.now();
        let s = self.platform.state();
        let to_match: Vec<_> = s
            .reviews
            .bounties()
            .iter()
            .filter(|b| b.state == BountyState::Open && now >= b.deadline)
            .map(|b| b.bounty_id)
            .collect();
        let grace = self.platform.config().review.grace_ticks;
        let overdue: Vec<_> = s
            .reviews
            .bounties()
            .iter()
            .filter(|b| b.state == BountyState::Matched && now > b.deadline + grace)
            .map(|b| b.bounty_id)
            .collect();
        let closed: Vec<_> = s
            .markets
            .markets()
            .iter()
            .filter(|m| m.state_at(now) == MarketState::Closed)
            .map(|m| m.market_id)
            .collect();
        for bounty in to_match {
            self.exec(Command::MatchReviewers { bounty, by: None });
        }
        for bounty in overdue {
            self.exec(Command::DefaultOverdue { bounty });
        }
        for market in closed {
            let outcome = if self.chance(0.5) { Side::Accept } else { Side::Reject };
            self.exec(Command::ResolveMarket { market, outcome });
        }
    }

    fn check(&self, epoch: u64) -> Result<(), SimError> {
        let failed = self.platform.check_invariants().into_iter().find(|c| !c.passed);
        match failed {
            Some(c) => Err(SimError::InvariantViolation {
                name: c.name,
                epoch,
                sequence: self.platform.state().events,
                detail: c.detail.unwrap_or_default(),
            }),
            None => Ok(()),
        }
    }
}

fn propensities(config: &ScenarioConfig, role: Role) -> Propensities {
    match role {
        Role::Freeman => config.propensities.freeman,
        Role::Producer => config.propensities.producer,
        Role::Consumer => config.propensities.consumer,
    }
}

/// Runs the scenario start to finish. Deterministic in the seed.
pub fn run_scenario(config: &ScenarioConfig) -> Result<SimRun, SimError> {
    config.validate()?;
    let platform_config = platform_config(config);
    let platform = Platform::new(platform_config.clone()).map_err(|e| SimError::Setup(e.to_string()))?;
    let genesis = EventRecord::genesis(&platform);
    let mut sim = Sim { platform, log: vec![genesis], rng: ChaCha8Rng::seed_from_u64(config.seed), rejected: 0 };

    let roles = std::iter::repeat_n(Role::Freeman, config.agents.freemen as usize)
        .chain(std::iter::repeat_n(Role::Producer, config.agents.producers as usize))
        .chain(std::iter::repeat_n(Role::Consumer, config.agents.consumers as usize));
    let mut agents = Vec::new();
    for (i, role) in roles.enumerate() {
        let count = sim.rng.random_range(1..=3);
        let mut topics: Vec<String> = Vec::new();
        while topics.len() < count {
            let t = TOPICS[sim.rng.random_range(0..TOPICS.len())].to_string();
            if !topics.contains(&t) {
                topics.push(t);
            }
        }
        let register = Command::RegisterUser { display_name: format!("agent-{i}"), expertise: topics.clone(), role: Some(role) };
        let Some(Outcome::User { user, .. }) = sim.exec(register) else {
            return Err(SimError::Setup(format!("agent {i} could not register")));
        };
        let user = user.user_id;
        if config.initial_credits > 0 && sim.exec(Command::GrantCredits { user, amount: config.initial_credits }).is_none() {
            return Err(SimError::Setup(format!("agent {i} could not be funded")));
        }
        if role != Role::Consumer {
            let exam_score = sim.rng.random_range(60..=100);
            sim.exec(Command::GrantLicense { user, fields: topics.clone(), exam_score });
        }
        agents.push(Agent { user, role, topics });
    }

    for epoch in 0..config.epochs {
        for _ in 0..config.ticks_per_epoch {
            for agent in &agents {
                let p = propensities(config, agent.role);
                if !p.is_idle() {
                    sim.act(agent, &p);
                }
            }
            sim.housekeeping();
            sim.exec(Command::AdvanceClock { ticks: 1 });
        }
        sim.exec(Command::SettleEpoch { epoch: Some(epoch) });
        sim.check(epoch)?;
    }

    let report = SimReport::from_log(&sim.log, &platform_config).map_err(|e| SimError::Setup(e.to_string()))?;
    Ok(SimRun { log: sim.log, report, rejected: sim.rejected, state: sim.platform.state().clone() })
}
