//! Scenario description, loaded from TOML.

use std::path::Path;

use panvas_core::ids::Credits;
use panvas_core::ledger::LedgerPolicy;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentCounts {
    pub freemen: u32,
    pub producers: u32,
    pub consumers: u32,
}

impl AgentCounts {
    pub fn total(&self) -> u32 {
        self.freemen + self.producers + self.consumers
    }
}

/// Per-tick probability of attempting each action.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Propensities {
    pub post_paper: f64,
    pub post_bounty: f64,
    pub bid: f64,
    pub review: f64,
    pub meta_review: f64,
    pub rate: f64,
    pub comment: f64,
    pub react: f64,
    pub open_market: f64,
    pub stake: f64,
}

impl Propensities {
    fn fields(&self) -> [(&'static str, f64); 10] {
        [
            ("post_paper", self.post_paper),
            ("post_bounty", self.post_bounty),
            ("bid", self.bid),
            ("review", self.review),
            ("meta_review", self.meta_review),
            ("rate", self.rate),
            ("comment", self.comment),
            ("react", self.react),
            ("open_market", self.open_market),
            ("stake", self.stake),
        ]
    }

    pub fn is_idle(&self) -> bool {
        self.fields().iter().all(|(_, p)| *p == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolePropensities {
    pub freeman: Propensities,
    pub producer: Propensities,
    pub consumer: Propensities,
}

impl Default for RolePropensities {
    fn default() -> Self {
        Self {
            producer: Propensities {
                post_paper: 0.03,
                post_bounty: 0.04,
                bid: 0.2,
                review: 0.5,
                meta_review: 0.02,
                rate: 0.02,
                comment: 0.02,
                react: 0.02,
                open_market: 0.005,
                stake: 0.01,
            },
            consumer: Propensities {
                post_paper: 0.0,
                post_bounty: 0.0,
                bid: 0.0,
                review: 0.0,
                meta_review: 0.06,
                rate: 0.15,
                comment: 0.15,
                react: 0.15,
                open_market: 0.01,
                stake: 0.08,
            },
            freeman: Propensities {
                post_paper: 0.015,
                post_bounty: 0.02,
                bid: 0.12,
                review: 0.5,
                meta_review: 0.04,
                rate: 0.08,
                comment: 0.08,
                react: 0.08,
                open_market: 0.008,
                stake: 0.04,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub epochs: u64,
    pub ticks_per_epoch: u64,
    /// Credits granted to every agent before the first epoch.
    pub initial_credits: Credits,
    /// Ticks after a bounty deadline before undelivered reviews default.
    pub review_grace_ticks: u64,
    pub agents: AgentCounts,
    pub propensities: RolePropensities,
    pub ledger: LedgerPolicy,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            epochs: 20,
            ticks_per_epoch: 5,
            initial_credits: 200,
            review_grace_ticks: 6,
            agents: AgentCounts { freemen: 100, producers: 50, consumers: 50 },
            propensities: RolePropensities::default(),
            ledger: LedgerPolicy::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let config: Self = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut problems = Vec::new();
        for (role, p) in [
            ("freeman", &self.propensities.freeman),
            ("producer", &self.propensities.producer),
            ("consumer", &self.propensities.consumer),
        ] {
            for (name, v) in p.fields() {
                if !(0.0..=1.0).contains(&v) {
                    problems.push(format!("propensities.{role}.{name} must be in [0, 1], got {v}"));
                }
            }
        }
        if self.ticks_per_epoch == 0 {
            problems.push("ticks_per_epoch must be at least 1".into());
        }
        self.ledger.validate(&mut problems);
        let needed = self.initial_credits.checked_mul(Credits::from(self.agents.total()));
        if needed.is_none_or(|n| n > self.ledger.treasury_genesis) {
            problems.push("initial credits for all agents exceed the treasury genesis".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(problems))
        }
    }
}
