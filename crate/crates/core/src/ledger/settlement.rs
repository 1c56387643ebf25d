//! Role-based epoch settlement formulas.

use serde::{Deserialize, Serialize};

use crate::identity::Role;
use crate::ids::{AccountId, Credits};

/// Which settlement formula produced a reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FormulaTag {
    /// `R = R0 + P`
    BasePlusProduction,
    /// `R = R0 + C`
    BasePlusConsumption,
    /// `R = R0 + floor((P + C) / 2)`
    BasePlusHalfSum,
}

impl FormulaTag {
    pub fn for_role(role: Role) -> Self {
        match role {
            Role::Producer => FormulaTag::BasePlusProduction,
            Role::Consumer => FormulaTag::BasePlusConsumption,
            Role::Freeman => FormulaTag::BasePlusHalfSum,
        }
    }
}

/// Reward for one account over one epoch.
///
/// Producers settle on production volume alone, consumers on consumption
/// volume alone, and freemen on the floor of the mean of both.
pub fn role_reward(role: Role, base: Credits, production: u64, consumption: u64) -> Credits {
    match role {
        Role::Producer => base + production,
        Role::Consumer => base + consumption,
        Role::Freeman => base + (production + consumption) / 2,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardStatement {
    pub account: AccountId,
    pub epoch: u64,
    pub role: Role,
    pub production: u64,
    pub consumption: u64,
    pub base_reward: Credits,
    pub reward: Credits,
    pub formula: FormulaTag,
}

impl RewardStatement {
    /// True when the stored reward matches a fresh evaluation of its formula.
    pub fn is_consistent(&self) -> bool {
        self.formula == FormulaTag::for_role(self.role)
            && self.reward
                == role_reward(self.role, self.base_reward, self.production, self.consumption)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn producer_ignores_consumption() {
        assert_eq!(role_reward(Role::Producer, 10, 7, 3), 17);
    }

    #[test]
    fn consumer_ignores_production() {
        assert_eq!(role_reward(Role::Consumer, 10, 7, 3), 13);
    }

    #[test]
    fn freeman_floors_the_half_sum() {
        assert_eq!(role_reward(Role::Freeman, 10, 3, 4), 13);
        assert_eq!(role_reward(Role::Freeman, 10, 4, 4), 14);
        assert_eq!(role_reward(Role::Freeman, 0, 1, 0), 0);
    }

    #[test]
    fn statement_consistency_detects_tampering() {
        let mut s = RewardStatement {
            account: AccountId(4),
            epoch: 0,
            role: Role::Freeman,
            production: 3,
            consumption: 4,
            base_reward: 10,
            reward: 13,
            formula: FormulaTag::BasePlusHalfSum,
        };
        assert!(s.is_consistent());
        s.reward = 14;
        assert!(!s.is_consistent());
    }
}
