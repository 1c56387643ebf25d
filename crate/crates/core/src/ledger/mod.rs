//! Double-entry credit ledger.
//!
//! Every flow of credits is a transfer between two accounts. New credits are
//! never printed: rewards and achievements are paid out of a finite genesis
//! treasury, so at every point
//!
//! ```text
//! treasury + escrow_pool + sum(user balances) == genesis total
//! ```
//!
//! Escrowed value sits in the single escrow pool account and is tracked by
//! [`EscrowHold`] records whose `HELD` amounts always sum to the pool balance.

mod settlement;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identity::Role;
use crate::ids::{AccountId, Credits, HoldId, Tick, TxnId, UserId};

pub use settlement::{role_reward, FormulaTag, RewardStatement};

pub const TREASURY: AccountId = AccountId(0);
pub const ESCROW_POOL: AccountId = AccountId(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Owner {
    Treasury,
    EscrowPool,
    #[serde(untagged)]
    User(UserId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Account {
    pub id: AccountId,
    pub owner: Owner,
    pub balance: Credits,
    pub vip: bool,
    pub created_at: Tick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TxnKind {
    DirectReward,
    BountyEscrow,
    BountyPayout,
    BetStake,
    BetProfit,
    Achievement,
    SettlementMint,
    VipPurchase,
    ModerationForfeit,
    ModerationRefund,
}

impl TxnKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TxnKind::DirectReward => "DIRECT_REWARD",
            TxnKind::BountyEscrow => "BOUNTY_ESCROW",
            TxnKind::BountyPayout => "BOUNTY_PAYOUT",
            TxnKind::BetStake => "BET_STAKE",
            TxnKind::BetProfit => "BET_PROFIT",
            TxnKind::Achievement => "ACHIEVEMENT",
            TxnKind::SettlementMint => "SETTLEMENT_MINT",
            TxnKind::VipPurchase => "VIP_PURCHASE",
            TxnKind::ModerationForfeit => "MODERATION_FORFEIT",
            TxnKind::ModerationRefund => "MODERATION_REFUND",
        }
    }

    /// Account constraints each kind imposes on its legs.
    fn check(self, debit: AccountId, credit: AccountId) -> Result<(), LedgerError> {
        let ok = match self {
            TxnKind::SettlementMint | TxnKind::Achievement | TxnKind::DirectReward => {
                debit == TREASURY && credit != ESCROW_POOL
            }
            TxnKind::VipPurchase | TxnKind::ModerationForfeit => {
                credit == TREASURY && debit != ESCROW_POOL
            }
            TxnKind::ModerationRefund => debit == TREASURY && credit != ESCROW_POOL,
            // deposits into escrow, or refunds out of it
            TxnKind::BountyEscrow | TxnKind::BetStake => {
                (credit == ESCROW_POOL) != (debit == ESCROW_POOL)
                    && debit != TREASURY
                    && credit != TREASURY
            }
            TxnKind::BountyPayout => debit == ESCROW_POOL && credit != TREASURY,
            // winnings to stakers, or the market fee to the treasury
            TxnKind::BetProfit => debit == ESCROW_POOL,
        };
        if ok {
            Ok(())
        } else {
            Err(LedgerError::KindConstraintViolation { kind: self, debit, credit })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub txn_id: TxnId,
    pub debit: AccountId,
    pub credit: AccountId,
    pub amount: Credits,
    pub kind: TxnKind,
    pub memo: String,
    pub epoch: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HoldReason {
    Bounty,
    Stake,
}

impl HoldReason {
    fn deposit_kind(self) -> TxnKind {
        match self {
            HoldReason::Bounty => TxnKind::BountyEscrow,
            HoldReason::Stake => TxnKind::BetStake,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HoldState {
    Held,
    Released,
    Refunded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EscrowHold {
    pub hold_id: HoldId,
    pub source: AccountId,
    pub amount: Credits,
    pub reason: HoldReason,
    pub state: HoldState,
}

/// Events that feed the production and consumption counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ActivityKind {
    ReviewSubmitted,
    MetaReviewSubmitted,
    FragmentPublished,
    RatingCast,
    CommentPosted,
    StakePlaced,
    Reaction,
}

impl ActivityKind {
    pub const ALL: [ActivityKind; 7] = [
        ActivityKind::ReviewSubmitted,
        ActivityKind::MetaReviewSubmitted,
        ActivityKind::FragmentPublished,
        ActivityKind::RatingCast,
        ActivityKind::CommentPosted,
        ActivityKind::StakePlaced,
        ActivityKind::Reaction,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityCounters {
    pub account: AccountId,
    pub epoch: u64,
    pub production: u64,
    pub consumption: u64,
}

/// One-time milestone reward: pays `reward` once an account has recorded
/// at least `at_least` events of `activity` over its lifetime.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AchievementRule {
    pub id: String,
    pub activity: ActivityKind,
    pub at_least: u64,
    pub reward: Credits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LedgerPolicy {
    pub treasury_genesis: Credits,
    pub base_reward: Credits,
    /// Minimum `P + C` within an epoch to receive any reward.
    pub activity_gate: u64,
    pub production_weights: BTreeMap<ActivityKind, u64>,
    pub consumption_weights: BTreeMap<ActivityKind, u64>,
    pub vip_price: Credits,
    /// Credits granted from the treasury when a user registers.
    pub signup_grant: Credits,
    pub achievements: Vec<AchievementRule>,
}

impl Default for LedgerPolicy {
    fn default() -> Self {
        use ActivityKind::*;
        let production_weights =
            BTreeMap::from([(ReviewSubmitted, 10), (MetaReviewSubmitted, 2), (FragmentPublished, 5)]);
        let consumption_weights =
            BTreeMap::from([(RatingCast, 1), (CommentPosted, 1), (StakePlaced, 1), (Reaction, 0)]);
        Self {
            treasury_genesis: 1_000_000,
            base_reward: 10,
            activity_gate: 1,
            production_weights,
            consumption_weights,
            vip_price: 100,
            signup_grant: 0,
            achievements: vec![AchievementRule {
                id: "first-review".into(),
                activity: ReviewSubmitted,
                at_least: 1,
                reward: 5,
            }],
        }
    }
}

impl LedgerPolicy {
    fn knows(&self, kind: ActivityKind) -> bool {
        self.production_weights.contains_key(&kind) || self.consumption_weights.contains_key(&kind)
    }

    pub fn validate(&self, problems: &mut Vec<String>) {
        if self.vip_price == 0 {
            problems.push("ledger.vip_price must be positive".into());
        }
        if self.activity_gate == 0 {
            problems.push("ledger.activity_gate must be at least 1".into());
        }
        let mut ids = BTreeSet::new();
        for rule in &self.achievements {
            if rule.id.trim().is_empty() {
                problems.push("ledger.achievements: rule id must be non-empty".into());
            }
            if !ids.insert(rule.id.as_str()) {
                problems.push(format!("ledger.achievements: duplicate rule id {:?}", rule.id));
            }
            if rule.reward == 0 {
                problems.push(format!("ledger.achievements: rule {:?} has zero reward", rule.id));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("owner {0:?} already has an account")]
    DuplicateOwner(Owner),
    #[error("unknown account {0}")]
    UnknownAccount(AccountId),
    #[error("unknown hold {0}")]
    UnknownHold(HoldId),
    #[error("account {account} holds {balance} credits, {needed} needed")]
    InsufficientFunds { account: AccountId, balance: Credits, needed: Credits },
    #[error("debit and credit are the same account {0}")]
    SameAccount(AccountId),
    #[error("amount must be positive")]
    InvalidAmount,
    #[error("{kind:?} cannot move credits from {debit} to {credit}")]
    KindConstraintViolation { kind: TxnKind, debit: AccountId, credit: AccountId },
    #[error("hold {0} is already settled")]
    AlreadySettled(HoldId),
    #[error("payout {payout} exceeds hold amount {held}")]
    PayoutExceedsHold { payout: Credits, held: Credits },
    #[error("event kind {0:?} has no configured weight")]
    UnknownEventKind(ActivityKind),
    #[error("epoch {0} is already settled")]
    EpochAlreadySettled(u64),
    #[error("epoch {requested} is not the current epoch {current}")]
    EpochNotCurrent { requested: u64, current: u64 },
    #[error("treasury holds {available} credits but settlement needs {needed}")]
    TreasuryExhausted { available: Credits, needed: Credits },
    #[error("account {0} is already VIP")]
    AlreadyVip(AccountId),
    #[error("pool distribution does not add up: {0}")]
    UnbalancedDistribution(String),
}

impl LedgerError {
    pub fn code(&self) -> &'static str {
        match self {
            LedgerError::DuplicateOwner(_) => "DUPLICATE_OWNER",
            LedgerError::UnknownAccount(_) => "UNKNOWN_ACCOUNT",
            LedgerError::UnknownHold(_) => "UNKNOWN_HOLD",
            LedgerError::InsufficientFunds { .. } => "INSUFFICIENT_FUNDS",
            LedgerError::SameAccount(_) => "SAME_ACCOUNT",
            LedgerError::InvalidAmount => "INVALID_AMOUNT",
            LedgerError::KindConstraintViolation { .. } => "KIND_CONSTRAINT_VIOLATION",
            LedgerError::AlreadySettled(_) => "ALREADY_SETTLED",
            LedgerError::PayoutExceedsHold { .. } => "PAYOUT_EXCEEDS_HOLD",
            LedgerError::UnknownEventKind(_) => "UNKNOWN_EVENT_KIND",
            LedgerError::EpochAlreadySettled(_) => "EPOCH_ALREADY_SETTLED",
            LedgerError::EpochNotCurrent { .. } => "EPOCH_NOT_CURRENT",
            LedgerError::TreasuryExhausted { .. } => "TREASURY_EXHAUSTED",
            LedgerError::AlreadyVip(_) => "ALREADY_VIP",
            LedgerError::UnbalancedDistribution(_) => "UNBALANCED_DISTRIBUTION",
        }
    }
}

pub type Result<T, E = LedgerError> = std::result::Result<T, E>;

/// Totals reported by [`Ledger::balance_sheet`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalanceSheet {
    pub balances: Vec<(AccountId, Owner, Credits)>,
    pub treasury: Credits,
    pub escrow: Credits,
    pub held_in_escrow: Credits,
    pub users_total: Credits,
    pub grand_total: Credits,
    pub genesis_total: Credits,
    pub settlement_minted: Credits,
    pub treasury_outflow: Credits,
    pub treasury_inflow: Credits,
}

impl BalanceSheet {
    pub fn conserves(&self) -> bool {
        self.grand_total == self.genesis_total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    policy: LedgerPolicy,
    accounts: Vec<Account>,
    user_accounts: BTreeMap<UserId, AccountId>,
    transactions: Vec<Transaction>,
    holds: Vec<EscrowHold>,
    epoch: u64,
    counters: BTreeMap<AccountId, ActivityCounters>,
    lifetime: BTreeMap<AccountId, BTreeMap<ActivityKind, u64>>,
    achievements_paid: BTreeMap<AccountId, BTreeSet<String>>,
    statements: Vec<RewardStatement>,
    genesis_total: Credits,
}

impl Ledger {
    /// Creates the ledger with its two system accounts. The treasury is seeded
    /// with the configured genesis credits; nothing else ever creates credits.
    pub fn genesis(policy: LedgerPolicy, at: Tick) -> Self {
        let genesis_total = policy.treasury_genesis;
        let mut ledger = Ledger {
            policy,
            accounts: Vec::new(),
            user_accounts: BTreeMap::new(),
            transactions: Vec::new(),
            holds: Vec::new(),
            epoch: 0,
            counters: BTreeMap::new(),
            lifetime: BTreeMap::new(),
            achievements_paid: BTreeMap::new(),
            statements: Vec::new(),
            genesis_total,
        };
        ledger.push_account(Owner::Treasury, genesis_total, at);
        ledger.push_account(Owner::EscrowPool, 0, at);
        ledger
    }

    fn push_account(&mut self, owner: Owner, balance: Credits, at: Tick) -> AccountId {
        let id = AccountId::from_index(self.accounts.len());
        self.accounts.push(Account { id, owner, balance, vip: false, created_at: at });
        id
    }

    pub fn policy(&self) -> &LedgerPolicy {
        &self.policy
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn open_account(&mut self, owner: Owner, at: Tick) -> Result<AccountId> {
        match owner {
            Owner::Treasury | Owner::EscrowPool => Err(LedgerError::DuplicateOwner(owner)),
            Owner::User(user) => {
                if self.user_accounts.contains_key(&user) {
                    return Err(LedgerError::DuplicateOwner(owner));
                }
                let id = self.push_account(owner, 0, at);
                self.user_accounts.insert(user, id);
                Ok(id)
            }
        }
    }

    pub fn account(&self, id: AccountId) -> Result<&Account> {
        self.accounts.get(id.index()).ok_or(LedgerError::UnknownAccount(id))
    }

    pub fn accounts(&self) -> &[Account] {
        &self.accounts
    }

    pub fn account_of(&self, user: UserId) -> Option<AccountId> {
        self.user_accounts.get(&user).copied()
    }

    pub fn balance(&self, id: AccountId) -> Result<Credits> {
        self.account(id).map(|a| a.balance)
    }

    pub fn transactions(&self) -> &[Transaction] {
        &self.transactions
    }

    pub fn holds(&self) -> &[EscrowHold] {
        &self.holds
    }

    pub fn hold(&self, id: HoldId) -> Result<&EscrowHold> {
        self.holds.get(id.index()).ok_or(LedgerError::UnknownHold(id))
    }

    pub fn statements(&self) -> &[RewardStatement] {
        &self.statements
    }

    pub fn genesis_total(&self) -> Credits {
        self.genesis_total
    }

    fn check_transfer(&self, debit: AccountId, credit: AccountId, amount: Credits, kind: TxnKind) -> Result<()> {
        if amount == 0 {
            return Err(LedgerError::InvalidAmount);
        }
        if debit == credit {
            return Err(LedgerError::SameAccount(debit));
        }
        let from = self.account(debit)?;
        self.account(credit)?;
        kind.check(debit, credit)?;
        if from.balance < amount {
            return Err(LedgerError::InsufficientFunds {
                account: debit,
                balance: from.balance,
                needed: amount,
            });
        }
        Ok(())
    }

    /// Posting with every precondition already checked.
    fn apply_transfer(
        &mut self,
        debit: AccountId,
        credit: AccountId,
        amount: Credits,
        kind: TxnKind,
        memo: String,
    ) -> Transaction {
        self.accounts[debit.index()].balance -= amount;
        self.accounts[credit.index()].balance += amount;
        let txn = Transaction {
            txn_id: TxnId::from_index(self.transactions.len()),
            debit,
            credit,
            amount,
            kind,
            memo,
            epoch: self.epoch,
        };
        self.transactions.push(txn.clone());
        txn
    }

    pub fn post_transaction(
        &mut self,
        debit: AccountId,
        credit: AccountId,
        amount: Credits,
        kind: TxnKind,
        memo: impl Into<String>,
    ) -> Result<Transaction> {
        self.check_transfer(debit, credit, amount, kind)?;
        Ok(self.apply_transfer(debit, credit, amount, kind, memo.into()))
    }

    pub fn hold_escrow(
        &mut self,
        source: AccountId,
        amount: Credits,
        reason: HoldReason,
        memo: impl Into<String>,
    ) -> Result<EscrowHold> {
        let kind = reason.deposit_kind();
        self.check_transfer(source, ESCROW_POOL, amount, kind)?;
        self.apply_transfer(source, ESCROW_POOL, amount, kind, memo.into());
        let hold = EscrowHold {
            hold_id: HoldId::from_index(self.holds.len()),
            source,
            amount,
            reason,
            state: HoldState::Held,
        };
        self.holds.push(hold.clone());
        Ok(hold)
    }

    fn held(&self, id: HoldId) -> Result<&EscrowHold> {
        let hold = self.hold(id)?;
        if hold.state != HoldState::Held {
            return Err(LedgerError::AlreadySettled(id));
        }
        Ok(hold)
    }

    fn payout_kind(reason: HoldReason) -> TxnKind {
        match reason {
            HoldReason::Bounty => TxnKind::BountyPayout,
            HoldReason::Stake => TxnKind::BetProfit,
        }
    }

    /// Pays the whole hold to `beneficiary`.
    pub fn release_escrow(
        &mut self,
        hold: HoldId,
        beneficiary: AccountId,
        memo: impl Into<String>,
    ) -> Result<Transaction> {
        let amount = self.held(hold)?.amount;
        let (txn, _) = self.release_partial(hold, beneficiary, amount, memo)?;
        Ok(txn)
    }

    /// Pays `amount` of the hold to `beneficiary` and returns the rest to the
    /// source. The hold ends `RELEASED`.
    pub fn release_partial(
        &mut self,
        hold: HoldId,
        beneficiary: AccountId,
        amount: Credits,
        memo: impl Into<String>,
    ) -> Result<(Transaction, Option<Transaction>)> {
        let h = self.held(hold)?.clone();
        if amount == 0 {
            return Err(LedgerError::InvalidAmount);
        }
        if amount > h.amount {
            return Err(LedgerError::PayoutExceedsHold { payout: amount, held: h.amount });
        }
        let kind = Self::payout_kind(h.reason);
        self.account(beneficiary)?;
        kind.check(ESCROW_POOL, beneficiary)?;
        if beneficiary == ESCROW_POOL {
            return Err(LedgerError::SameAccount(ESCROW_POOL));
        }
        let memo = memo.into();
        let paid = self.apply_transfer(ESCROW_POOL, beneficiary, amount, kind, memo.clone());
        let refund = (amount < h.amount).then(|| {
            self.apply_transfer(
                ESCROW_POOL,
                h.source,
                h.amount - amount,
                h.reason.deposit_kind(),
                format!("{memo}:refund"),
            )
        });
        self.holds[hold.index()].state = HoldState::Released;
        Ok((paid, refund))
    }

    /// Returns the whole hold to its source. The hold ends `REFUNDED`.
    pub fn refund_escrow(&mut self, hold: HoldId, memo: impl Into<String>) -> Result<Transaction> {
        let h = self.held(hold)?.clone();
        let txn = self.apply_transfer(
            ESCROW_POOL,
            h.source,
            h.amount,
            h.reason.deposit_kind(),
            memo.into(),
        );
        self.holds[hold.index()].state = HoldState::Refunded;
        Ok(txn)
    }

    /// Settles a set of holds as one pooled distribution: every hold ends
    /// `RELEASED` and the pooled amount is paid out exactly as `payouts`.
    pub fn distribute_pool(
        &mut self,
        holds: &[HoldId],
        payouts: &[(AccountId, Credits, TxnKind)],
        memo: &str,
    ) -> Result<Vec<Transaction>> {
        let mut pool: Credits = 0;
        let mut seen = BTreeSet::new();
        for &id in holds {
            if !seen.insert(id) {
                return Err(LedgerError::UnbalancedDistribution(format!("hold {id} listed twice")));
            }
            pool += self.held(id)?.amount;
        }
        let paid: Credits = payouts.iter().map(|(_, amount, _)| amount).sum();
        if paid != pool {
            return Err(LedgerError::UnbalancedDistribution(format!(
                "pool {pool} but payouts total {paid}"
            )));
        }
        for &(to, amount, kind) in payouts {
            if amount == 0 {
                return Err(LedgerError::InvalidAmount);
            }
            self.account(to)?;
            if to == ESCROW_POOL {
                return Err(LedgerError::SameAccount(ESCROW_POOL));
            }
            kind.check(ESCROW_POOL, to)?;
        }
        for &id in holds {
            self.holds[id.index()].state = HoldState::Released;
        }
        Ok(payouts
            .iter()
            .map(|&(to, amount, kind)| self.apply_transfer(ESCROW_POOL, to, amount, kind, memo.to_string()))
            .collect())
    }

    pub fn counters(&self, account: AccountId) -> ActivityCounters {
        self.counters.get(&account).copied().unwrap_or(ActivityCounters {
            account,
            epoch: self.epoch,
            production: 0,
            consumption: 0,
        })
    }

    pub fn lifetime_count(&self, account: AccountId, kind: ActivityKind) -> u64 {
        self.lifetime
            .get(&account)
            .and_then(|m| m.get(&kind))
            .copied()
            .unwrap_or(0)
    }

    pub fn record_activity(&mut self, account: AccountId, kind: ActivityKind) -> Result<ActivityCounters> {
        if !self.policy.knows(kind) {
            return Err(LedgerError::UnknownEventKind(kind));
        }
        self.account(account)?;
        let p = self.policy.production_weights.get(&kind).copied().unwrap_or(0);
        let c = self.policy.consumption_weights.get(&kind).copied().unwrap_or(0);
        let epoch = self.epoch;
        let counters = self.counters.entry(account).or_insert(ActivityCounters {
            account,
            epoch,
            production: 0,
            consumption: 0,
        });
        counters.production += p;
        counters.consumption += c;
        let snapshot = *counters;
        *self.lifetime.entry(account).or_default().entry(kind).or_insert(0) += 1;
        Ok(snapshot)
    }

    /// Closes the current epoch: one `SETTLEMENT_MINT` per account that passed
    /// the activity gate, paid from the treasury. Either every reward is paid
    /// or none is.
    pub fn settle_epoch(
        &mut self,
        epoch: u64,
        role_of: impl Fn(AccountId) -> Role,
    ) -> Result<Vec<RewardStatement>> {
        if epoch < self.epoch {
            return Err(LedgerError::EpochAlreadySettled(epoch));
        }
        if epoch > self.epoch {
            return Err(LedgerError::EpochNotCurrent { requested: epoch, current: self.epoch });
        }
        let base = self.policy.base_reward;
        let statements: Vec<RewardStatement> = self
            .counters
            .values()
            .filter(|c| c.production + c.consumption >= self.policy.activity_gate)
            .map(|c| {
                let role = role_of(c.account);
                RewardStatement {
                    account: c.account,
                    epoch,
                    role,
                    production: c.production,
                    consumption: c.consumption,
                    base_reward: base,
                    reward: role_reward(role, base, c.production, c.consumption),
                    formula: FormulaTag::for_role(role),
                }
            })
            .collect();
        let needed: Credits = statements.iter().map(|s| s.reward).sum();
        let available = self.accounts[TREASURY.index()].balance;
        if needed > available {
            return Err(LedgerError::TreasuryExhausted { available, needed });
        }
        for s in &statements {
            if s.reward > 0 {
                self.apply_transfer(
                    TREASURY,
                    s.account,
                    s.reward,
                    TxnKind::SettlementMint,
                    format!("epoch:{epoch}"),
                );
            }
        }
        self.statements.extend(statements.iter().cloned());
        self.counters.clear();
        self.epoch += 1;
        Ok(statements)
    }

    /// Pays every newly satisfied milestone, in rule id order. Each rule pays
    /// an account at most once, ever. Rules the treasury cannot cover are
    /// skipped and stay eligible.
    pub fn evaluate_achievements(&mut self, account: AccountId) -> Result<Vec<Transaction>> {
        self.account(account)?;
        let mut due: Vec<AchievementRule> = self
            .policy
            .achievements
            .iter()
            .filter(|rule| {
                let paid = self
                    .achievements_paid
                    .get(&account)
                    .is_some_and(|set| set.contains(&rule.id));
                !paid && self.lifetime_count(account, rule.activity) >= rule.at_least
            })
            .cloned()
            .collect();
        due.sort_by(|a, b| a.id.cmp(&b.id));
        let mut paid = Vec::new();
        for rule in due {
            if self.accounts[TREASURY.index()].balance < rule.reward {
                continue;
            }
            let txn = self.apply_transfer(
                TREASURY,
                account,
                rule.reward,
                TxnKind::Achievement,
                format!("achievement:{}", rule.id),
            );
            self.achievements_paid.entry(account).or_default().insert(rule.id);
            paid.push(txn);
        }
        Ok(paid)
    }

    pub fn purchase_vip(&mut self, account: AccountId) -> Result<Transaction> {
        let acct = self.account(account)?;
        if acct.vip {
            return Err(LedgerError::AlreadyVip(account));
        }
        let price = self.policy.vip_price;
        let txn = self.post_transaction(account, TREASURY, price, TxnKind::VipPurchase, "vip")?;
        self.accounts[account.index()].vip = true;
        Ok(txn)
    }

    pub fn balance_sheet(&self) -> BalanceSheet {
        let treasury = self.accounts[TREASURY.index()].balance;
        let escrow = self.accounts[ESCROW_POOL.index()].balance;
        let users_total: Credits = self.accounts[2..].iter().map(|a| a.balance).sum();
        let held_in_escrow = self
            .holds
            .iter()
            .filter(|h| h.state == HoldState::Held)
            .map(|h| h.amount)
            .sum();
        let mut settlement_minted = 0;
        let mut treasury_outflow = 0;
        let mut treasury_inflow = 0;
        for t in &self.transactions {
            if t.kind == TxnKind::SettlementMint {
                settlement_minted += t.amount;
            }
            if t.debit == TREASURY {
                treasury_outflow += t.amount;
            }
            if t.credit == TREASURY {
                treasury_inflow += t.amount;
            }
        }
        BalanceSheet {
            balances: self.accounts.iter().map(|a| (a.id, a.owner, a.balance)).collect(),
            treasury,
            escrow,
            held_in_escrow,
            users_total,
            grand_total: treasury + escrow + users_total,
            genesis_total: self.genesis_total,
            settlement_minted,
            treasury_outflow,
            treasury_inflow,
        }
    }

    /// Writes the transaction log as newline-delimited JSON.
    pub fn export_ndjson(&self, mut out: impl Write) -> io::Result<()> {
        for t in &self.transactions {
            serde_json::to_writer(&mut out, t)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Rebuilds account balances from genesis by replaying a transaction log.
/// Used as an independent oracle for the ledger's cached balances.
pub fn replay_balances(genesis_total: Credits, log: &[Transaction]) -> std::result::Result<BTreeMap<AccountId, i128>, TxnId> {
    let mut balances: BTreeMap<AccountId, i128> = BTreeMap::from([(TREASURY, genesis_total as i128)]);
    for t in log {
        *balances.entry(t.debit).or_insert(0) -= t.amount as i128;
        *balances.entry(t.credit).or_insert(0) += t.amount as i128;
        if balances[&t.debit] < 0 {
            return Err(t.txn_id);
        }
    }
    Ok(balances)
}
