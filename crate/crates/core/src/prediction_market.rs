//! Parimutuel markets on whether a paper is accepted at a venue.
//!
//! All stakes on a market are pooled in escrow. At resolution a fee of
//! `floor(pool * fee_bps / 10_000)` goes to the treasury and the rest is split
//! among winning-side stakers in proportion to their stake, using
//! largest-remainder apportionment so the integer payouts add up exactly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{AccountId, Credits, HoldId, MarketId, PaperId, StakeId, Tick, UserId};
use crate::ledger::{HoldReason, Ledger, LedgerError, TxnKind, TREASURY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Side {
    Accept,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MarketState {
    Open,
    Closed,
    Resolved,
    Voided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MarketOutcome {
    Accept,
    Reject,
    Void,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Market {
    pub market_id: MarketId,
    pub paper_id: PaperId,
    pub venue: String,
    pub close_time: Tick,
    /// Stored state; `OPEN` reads as `CLOSED` once `close_time` has passed.
    state: MarketState,
    pub fee_bps: u32,
}

impl Market {
    pub fn state_at(&self, now: Tick) -> MarketState {
        match self.state {
            MarketState::Open if now >= self.close_time => MarketState::Closed,
            s => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stake {
    pub stake_id: StakeId,
    pub market_id: MarketId,
    pub staker: UserId,
    pub account: AccountId,
    pub side: Side,
    pub amount: Credits,
    pub escrow_hold: HoldId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayoutSchedule {
    pub market_id: MarketId,
    pub outcome: MarketOutcome,
    pub pool: Credits,
    pub fee_taken: Credits,
    /// Per winning account (or per staker on a void), ascending account id.
    pub payouts: Vec<(AccountId, Credits)>,
}

impl PayoutSchedule {
    pub fn is_exact(&self) -> bool {
        self.payouts.iter().map(|(_, c)| c).sum::<Credits>() + self.fee_taken == self.pool
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarketPolicy {
    pub default_fee_bps: u32,
}

impl Default for MarketPolicy {
    fn default() -> Self {
        Self { default_fee_bps: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MarketError {
    #[error("an open market for {paper} at {venue:?} already exists")]
    DuplicateMarket { paper: PaperId, venue: String },
    #[error("unknown market {0}")]
    UnknownMarket(MarketId),
    #[error("market {0} no longer accepts stakes")]
    MarketClosed(MarketId),
    #[error("authors cannot bet on their own paper")]
    AuthorCannotBet,
    #[error("market {0} is already resolved")]
    AlreadyResolved(MarketId),
    #[error("market {0} has not reached its close time")]
    NotClosed(MarketId),
    #[error("venue must be non-empty")]
    EmptyVenue,
    #[error("close time {close_time} is not after now ({now})")]
    InvalidCloseTime { close_time: Tick, now: Tick },
    #[error("fee of {0} basis points exceeds 10000")]
    InvalidFee(u32),
    #[error("stake amount must be positive")]
    InvalidAmount,
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

impl MarketError {
    pub fn code(&self) -> &'static str {
        match self {
            MarketError::DuplicateMarket { .. } => "DUPLICATE_MARKET",
            MarketError::UnknownMarket(_) => "UNKNOWN_MARKET",
            MarketError::MarketClosed(_) => "MARKET_CLOSED",
            MarketError::AuthorCannotBet => "AUTHOR_CANNOT_BET",
            MarketError::AlreadyResolved(_) => "ALREADY_RESOLVED",
            MarketError::NotClosed(_) => "NOT_CLOSED",
            MarketError::EmptyVenue | MarketError::InvalidCloseTime { .. } => "VALIDATION_ERROR",
            MarketError::InvalidFee(_) => "VALIDATION_ERROR",
            MarketError::InvalidAmount => "INVALID_AMOUNT",
            MarketError::Ledger(e) => e.code(),
        }
    }
}

type Result<T, E = MarketError> = std::result::Result<T, E>;

/// Splits `total` across `weights` in proportion, handing leftover units to the
/// largest fractional remainders. Ties go to the larger weight, then the
/// smaller account id. Returned amounts line up with `weights` and always sum
/// to `total` (when the weights sum to more than zero).
pub fn apportion(total: Credits, weights: &[(AccountId, Credits)]) -> Vec<Credits> {
    let sum: u128 = weights.iter().map(|&(_, w)| u128::from(w)).sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let mut shares = Vec::with_capacity(weights.len());
    let mut remainders = Vec::with_capacity(weights.len());
    for (i, &(account, w)) in weights.iter().enumerate() {
        let scaled = u128::from(total) * u128::from(w);
        shares.push((scaled / sum) as Credits);
        remainders.push((scaled % sum, w, account, i));
    }
    let handed: Credits = shares.iter().sum();
    let leftover = (total - handed) as usize;
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
    for &(_, _, _, i) in remainders.iter().take(leftover) {
        shares[i] += 1;
    }
    shares
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionMarkets {
    policy: MarketPolicy,
    markets: Vec<Market>,
    stakes: Vec<Stake>,
    schedules: BTreeMap<MarketId, PayoutSchedule>,
}

impl PredictionMarkets {
    pub fn new(policy: MarketPolicy) -> Self {
        Self { policy, markets: Vec::new(), stakes: Vec::new(), schedules: BTreeMap::new() }
    }

    pub fn market(&self, id: MarketId) -> Result<&Market> {
        self.markets.get(id.index()).ok_or(MarketError::UnknownMarket(id))
    }

    pub fn markets(&self) -> &[Market] {
        &self.markets
    }

    pub fn stakes_of(&self, market: MarketId) -> impl Iterator<Item = &Stake> {
        self.stakes.iter().filter(move |s| s.market_id == market)
    }

    pub fn schedule(&self, market: MarketId) -> Option<&PayoutSchedule> {
        self.schedules.get(&market)
    }

    pub fn schedules(&self) -> impl Iterator<Item = &PayoutSchedule> {
        self.schedules.values()
    }

    /// Pool totals per side.
    pub fn pools(&self, market: MarketId) -> (Credits, Credits) {
        self.stakes_of(market).fold((0, 0), |(a, r), s| match s.side {
            Side::Accept => (a + s.amount, r),
            Side::Reject => (a, r + s.amount),
        })
    }

    pub fn open_market(
        &mut self,
        paper: PaperId,
        venue: &str,
        close_time: Tick,
        fee_bps: Option<u32>,
        now: Tick,
    ) -> Result<&Market> {
        let venue = venue.trim();
        if venue.is_empty() {
            return Err(MarketError::EmptyVenue);
        }
        let fee_bps = fee_bps.unwrap_or(self.policy.default_fee_bps);
        if fee_bps > 10_000 {
            return Err(MarketError::InvalidFee(fee_bps));
        }
        if close_time <= now {
            return Err(MarketError::InvalidCloseTime { close_time, now });
        }
        if self.markets.iter().any(|m| {
            m.paper_id == paper && m.venue == venue && m.state_at(now) == MarketState::Open
        }) {
            return Err(MarketError::DuplicateMarket { paper, venue: venue.to_string() });
        }
        let market_id = MarketId::from_index(self.markets.len());
        self.markets.push(Market {
            market_id,
            paper_id: paper,
            venue: venue.to_string(),
            close_time,
            state: MarketState::Open,
            fee_bps,
        });
        Ok(&self.markets[market_id.index()])
    }

    #[allow(clippy::too_many_arguments)]
    pub fn place_stake(
        &mut self,
        ledger: &mut Ledger,
        market: MarketId,
        staker: UserId,
        account: AccountId,
        is_author: bool,
        side: Side,
        amount: Credits,
        now: Tick,
    ) -> Result<&Stake> {
        let m = self.market(market)?;
        if m.state_at(now) != MarketState::Open {
            return Err(MarketError::MarketClosed(market));
        }
        if is_author {
            return Err(MarketError::AuthorCannotBet);
        }
        if amount == 0 {
            return Err(MarketError::InvalidAmount);
        }
        let hold = ledger.hold_escrow(account, amount, HoldReason::Stake, format!("{market}"))?;
        let stake_id = StakeId::from_index(self.stakes.len());
        self.stakes.push(Stake {
            stake_id,
            market_id: market,
            staker,
            account,
            side,
            amount,
            escrow_hold: hold.hold_id,
        });
        Ok(&self.stakes[stake_id.index()])
    }

    /// Settles a closed market on the reported outcome. Markets with nobody on
    /// one of the two sides are voided and every stake is refunded.
    pub fn resolve_market(
        &mut self,
        ledger: &mut Ledger,
        market: MarketId,
        outcome: Side,
        now: Tick,
    ) -> Result<&PayoutSchedule> {
        let m = self.market(market)?.clone();
        match m.state_at(now) {
            MarketState::Open => return Err(MarketError::NotClosed(market)),
            MarketState::Resolved | MarketState::Voided => {
                return Err(MarketError::AlreadyResolved(market))
            }
            MarketState::Closed => {}
        }
        let stakes: Vec<Stake> = self.stakes_of(market).cloned().collect();
        let pool: Credits = stakes.iter().map(|s| s.amount).sum();
        let (accept, reject) = self.pools(market);
        let memo = format!("{market}");

        let schedule = if accept == 0 || reject == 0 {
            let mut refunds: BTreeMap<AccountId, Credits> = BTreeMap::new();
            for s in &stakes {
                ledger.refund_escrow(s.escrow_hold, format!("{memo}:void"))?;
                *refunds.entry(s.account).or_insert(0) += s.amount;
            }
            self.markets[market.index()].state = MarketState::Voided;
            PayoutSchedule {
                market_id: market,
                outcome: MarketOutcome::Void,
                pool,
                fee_taken: 0,
                payouts: refunds.into_iter().collect(),
            }
        } else {
            let fee = (u128::from(pool) * u128::from(m.fee_bps) / 10_000) as Credits;
            let distributable = pool - fee;
            let mut winners: BTreeMap<AccountId, Credits> = BTreeMap::new();
            for s in stakes.iter().filter(|s| s.side == outcome) {
                *winners.entry(s.account).or_insert(0) += s.amount;
            }
            let weights: Vec<(AccountId, Credits)> = winners.into_iter().collect();
            let shares = apportion(distributable, &weights);
            let payouts: Vec<(AccountId, Credits)> =
                weights.iter().map(|&(a, _)| a).zip(shares).collect();

            let mut transfers: Vec<(AccountId, Credits, TxnKind)> = payouts
                .iter()
                .filter(|(_, c)| *c > 0)
                .map(|&(a, c)| (a, c, TxnKind::BetProfit))
                .collect();
            if fee > 0 {
                transfers.push((TREASURY, fee, TxnKind::BetProfit));
            }
            let holds: Vec<HoldId> = stakes.iter().map(|s| s.escrow_hold).collect();
            ledger.distribute_pool(&holds, &transfers, &memo)?;
            self.markets[market.index()].state = MarketState::Resolved;
            PayoutSchedule {
                market_id: market,
                outcome: match outcome {
                    Side::Accept => MarketOutcome::Accept,
                    Side::Reject => MarketOutcome::Reject,
                },
                pool,
                fee_taken: fee,
                payouts,
            }
        };
        self.schedules.insert(market, schedule);
        Ok(&self.schedules[&market])
    }
}
