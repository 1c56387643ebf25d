//! Named economy invariants, checked against live state.

use serde::{Deserialize, Serialize};

use super::Platform;
use crate::ledger::{replay_balances, HoldState, TxnKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl InvariantCheck {
    fn new(name: &str, result: Result<(), String>) -> Self {
        Self { name: name.to_string(), passed: result.is_ok(), detail: result.err() }
    }
}

pub const INVARIANTS: [&str; 5] = [
    "conservation",
    "escrow_identity",
    "settlement_exactness",
    "market_exactness",
    "bounty_money_safety",
];

impl Platform {
    pub fn check_invariants(&self) -> Vec<InvariantCheck> {
        vec![
            InvariantCheck::new(INVARIANTS[0], self.check_conservation()),
            InvariantCheck::new(INVARIANTS[1], self.check_escrow()),
            InvariantCheck::new(INVARIANTS[2], self.check_settlement()),
            InvariantCheck::new(INVARIANTS[3], self.check_markets()),
            InvariantCheck::new(INVARIANTS[4], self.state.reviews.audit(&self.state.ledger)),
        ]
    }

    /// Cached balances must sum to the genesis total and agree with a
    /// from-scratch replay of the transaction log.
    fn check_conservation(&self) -> Result<(), String> {
        let ledger = &self.state.ledger;
        let sheet = ledger.balance_sheet();
        if !sheet.conserves() {
            return Err(format!("grand total {} != genesis {}", sheet.grand_total, sheet.genesis_total));
        }
        let replayed = replay_balances(ledger.genesis_total(), ledger.transactions())
            .map_err(|txn| format!("{txn} overdraws its debit account"))?;
        for a in ledger.accounts() {
            let expect = replayed.get(&a.id).copied().unwrap_or(0);
            if expect != i128::from(a.balance) {
                return Err(format!("{} holds {} but the log gives {expect}", a.id, a.balance));
            }
        }
        Ok(())
    }

    fn check_escrow(&self) -> Result<(), String> {
        let sheet = self.state.ledger.balance_sheet();
        if sheet.escrow != sheet.held_in_escrow {
            return Err(format!("escrow pool {} but holds total {}", sheet.escrow, sheet.held_in_escrow));
        }
        Ok(())
    }

    fn check_settlement(&self) -> Result<(), String> {
        let ledger = &self.state.ledger;
        let mut promised = 0;
        for s in ledger.statements() {
            if !s.is_consistent() {
                return Err(format!("statement for {} in epoch {} misapplies its formula", s.account, s.epoch));
            }
            promised += s.reward;
        }
        let minted: u64 = ledger
            .transactions()
            .iter()
            .filter(|t| t.kind == TxnKind::SettlementMint)
            .map(|t| t.amount)
            .sum();
        if minted != promised {
            return Err(format!("minted {minted} but statements total {promised}"));
        }
        Ok(())
    }

    fn check_markets(&self) -> Result<(), String> {
        let markets = &self.state.markets;
        for s in markets.schedules() {
            if !s.is_exact() {
                return Err(format!("{}: payouts and fee do not add up to the pool", s.market_id));
            }
            for stake in markets.stakes_of(s.market_id) {
                let hold = self.state.ledger.hold(stake.escrow_hold).map_err(|e| e.to_string())?;
                if hold.state == HoldState::Held {
                    return Err(format!("{} settled but {} is still escrowed", s.market_id, stake.stake_id));
                }
            }
        }
        Ok(())
    }
}
