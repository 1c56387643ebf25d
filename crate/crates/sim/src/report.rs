//! Run summaries, computed from the event log alone.

use std::collections::BTreeMap;

use panvas_core::ids::Credits;
use panvas_core::ledger::Owner;
use panvas_core::platform::{replay, InvariantCheck, ReplayError};
use panvas_core::prediction_market::MarketOutcome;
use panvas_core::review_market::BountyState;
use panvas_core::{EventRecord, Platform, PlatformConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMint {
    pub epoch: u64,
    pub minted: Credits,
    pub accounts_paid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceStats {
    pub users: usize,
    pub min: Credits,
    /// Lower median.
    pub median: Credits,
    pub max: Credits,
    pub gini: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BountyStats {
    pub posted: usize,
    pub fulfilled: usize,
    pub expired: usize,
    pub in_progress: usize,
    /// Fulfilled over closed (fulfilled plus expired); 0 when none closed.
    pub fulfillment_rate: f64,
    pub reviews_delivered: usize,
    pub assignments_defaulted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketStats {
    pub opened: usize,
    pub resolved: usize,
    pub voided: usize,
    pub pool_total: Credits,
    pub fees_total: Credits,
    pub paid_out: Credits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub events: u64,
    pub genesis_total: Credits,
    pub grand_total: Credits,
    pub total_minted: Credits,
    pub mint_per_epoch: Vec<EpochMint>,
    pub balances: BalanceStats,
    pub bounties: BountyStats,
    pub markets: MarketStats,
    pub invariants: Vec<InvariantCheck>,
}

impl SimReport {
    pub fn from_log(records: &[EventRecord], base: &PlatformConfig) -> Result<Self, ReplayError> {
        let platform = replay(records, base)?;
        Ok(Self::from_platform(&platform))
    }

    pub fn passed(&self) -> bool {
        self.invariants.iter().all(|c| c.passed)
    }

    fn from_platform(p: &Platform) -> Self {
        let s = p.state();
        let mut per_epoch: BTreeMap<u64, EpochMint> = BTreeMap::new();
        for st in s.ledger.statements() {
            let e = per_epoch.entry(st.epoch).or_insert(EpochMint { epoch: st.epoch, minted: 0, accounts_paid: 0 });
            e.minted += st.reward;
            e.accounts_paid += usize::from(st.reward > 0);
        }
        let mut balances: Vec<Credits> = s
            .ledger
            .accounts()
            .iter()
            .filter(|a| matches!(a.owner, Owner::User(_)))
            .map(|a| a.balance)
            .collect();
        balances.sort_unstable();

        let bounties = s.reviews.bounties();
        let count = |st: BountyState| bounties.iter().filter(|b| b.state == st).count();
        let (fulfilled, expired) = (count(BountyState::Fulfilled), count(BountyState::Expired));
        let defaulted = s
            .reviews
            .assignments()
            .iter()
            .filter(|a| a.state == panvas_core::review_market::AssignmentState::Defaulted)
            .count();

        let mut markets = MarketStats {
            opened: s.markets.markets().len(),
            resolved: 0,
            voided: 0,
            pool_total: 0,
            fees_total: 0,
            paid_out: 0,
        };
        for sched in s.markets.schedules() {
            match sched.outcome {
                MarketOutcome::Void => markets.voided += 1,
                _ => markets.resolved += 1,
            }
            markets.pool_total += sched.pool;
            markets.fees_total += sched.fee_taken;
            markets.paid_out += sched.payouts.iter().map(|(_, c)| c).sum::<Credits>();
        }

        let sheet = s.ledger.balance_sheet();
        let invariants = p.check_invariants();
        Self {
            events: s.events,
            genesis_total: sheet.genesis_total,
            grand_total: sheet.grand_total,
            total_minted: per_epoch.values().map(|e| e.minted).sum(),
            mint_per_epoch: per_epoch.into_values().collect(),
            balances: BalanceStats {
                users: balances.len(),
                min: balances.first().copied().unwrap_or(0),
                median: balances.get(balances.len().saturating_sub(1) / 2).copied().unwrap_or(0),
                max: balances.last().copied().unwrap_or(0),
                gini: gini(&balances),
            },
            bounties: BountyStats {
                posted: bounties.len(),
                fulfilled,
                expired,
                in_progress: count(BountyState::Open) + count(BountyState::Matched),
                fulfillment_rate: if fulfilled + expired == 0 {
                    0.0
                } else {
                    fulfilled as f64 / (fulfilled + expired) as f64
                },
                reviews_delivered: s.reviews.reviews().len(),
                assignments_defaulted: defaulted,
            },
            markets,
            invariants,
        }
    }
}

/// Gini coefficient of non-negative values; 0 for an empty or all-zero set.
pub fn gini(values: &[Credits]) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable();
    let n = v.len() as f64;
    let total: f64 = v.iter().map(|&x| x as f64).sum();
    if v.is_empty() || total == 0.0 {
        return 0.0;
    }
    let weighted: f64 = v.iter().enumerate().map(|(i, &x)| (i as f64 + 1.0) * x as f64).sum();
    (2.0 * weighted) / (n * total) - (n + 1.0) / n
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Mean absolute difference over all ordered pairs, halved and divided
    /// by the mean.
    fn gini_pairs(v: &[Credits]) -> f64 {
        let n = v.len() as f64;
        let mean = v.iter().sum::<Credits>() as f64 / n;
        let diff: f64 = v.iter().flat_map(|&a| v.iter().map(move |&b| (a as f64 - b as f64).abs())).sum();
        diff / (2.0 * n * n * mean)
    }

    #[test]
    fn gini_edges() {
        assert_eq!(gini(&[]), 0.0);
        assert_eq!(gini(&[0, 0]), 0.0);
        assert!(gini(&[5, 5, 5]).abs() < 1e-12);
        assert!((gini(&[0, 0, 0, 10]) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn gini_matches_pairwise_definition() {
        for v in [vec![1, 2, 3, 4], vec![10, 0, 3], vec![7, 7, 1, 100, 42]] {
            assert!((gini(&v) - gini_pairs(&v)).abs() < 1e-12, "{v:?}");
        }
    }

    proptest::proptest! {
        #[test]
        fn gini_is_bounded_and_agrees(v in proptest::collection::vec(0u64..5_000, 1..60)) {
            let g = gini(&v);
            proptest::prop_assert!((0.0..1.0).contains(&g));
            if v.iter().any(|&x| x > 0) {
                proptest::prop_assert!((g - gini_pairs(&v)).abs() < 1e-9);
            }
        }
    }
}
