//! Platform configuration, loaded from TOML and validated as a whole.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engagement::EngagementPolicy;
use crate::identity::IdentityPolicy;
use crate::ledger::LedgerPolicy;
use crate::moderation::ModerationPolicy;
use crate::paper_store::PaperPolicy;
use crate::prediction_market::MarketPolicy;
use crate::review_market::ReviewPolicy;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlatformConfig {
    pub ledger: LedgerPolicy,
    pub identity: IdentityPolicy,
    pub paper: PaperPolicy,
    pub review: ReviewPolicy,
    pub engagement: EngagementPolicy,
    pub market: MarketPolicy,
    pub moderation: ModerationPolicy,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid config: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

impl ConfigError {
    pub fn code(&self) -> &'static str {
        "INVALID_CONFIG"
    }
}

impl PlatformConfig {
    /// Parses and validates. Any problem rejects the whole config.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads the TOML file and merges the lexicon file it points to, resolved
    /// relative to the config file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let table: toml::Table = toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Self::from_table(table, path.parent().unwrap_or(Path::new(".")))
    }

    /// Builds a config from an already parsed table; `lexicon_path` is
    /// resolved against `base_dir`.
    pub fn from_table(table: toml::Table, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut config: Self = table.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        if let Some(rel) = config.moderation.lexicon_path.take() {
            let lexicon = base_dir.join(rel);
            let terms = std::fs::read_to_string(&lexicon).map_err(|source| ConfigError::Io {
                path: lexicon.display().to_string(),
                source,
            })?;
            config.moderation.lexicon.extend(parse_lexicon(&terms));
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        self.ledger.validate(&mut problems);
        self.identity.validate(&mut problems);
        self.review.validate(&mut problems);
        self.engagement.validate(&mut problems);
        self.moderation.validate(&mut problems);
        if self.paper.max_fragment_bytes == 0 {
            problems.push("paper.max_fragment_bytes must be positive".into());
        }
        if self.market.default_fee_bps > 10_000 {
            problems.push("market.default_fee_bps must not exceed 10000".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(problems))
        }
    }
}

/// One term per line; blank lines and `#` comments are skipped.
pub fn parse_lexicon(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect()
}
