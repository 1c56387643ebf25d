//! Service configuration: a `[server]` table plus the platform policy tables.

use std::path::{Path, PathBuf};

use panvas_core::config::ConfigError;
use panvas_core::PlatformConfig;
use serde::{Deserialize, Serialize};

pub const CONFIG_ENV: &str = "PANVAS_CONFIG";
pub const DEFAULT_CONFIG: &str = "panvas.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    /// Time moves only through `POST /admin/tick`.
    #[default]
    Logical,
    /// A background task advances one tick every `tick_seconds`.
    Wall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSettings {
    pub listen: String,
    pub data_dir: PathBuf,
    pub snapshot_every: u64,
    pub fsync: bool,
    pub clock: ClockMode,
    pub tick_seconds: u64,
    /// Bearer token for `/admin` routes. Generated into the data directory
    /// when unset.
    pub admin_token: Option<String>,
}

impl Default for ServerSettings {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("panvas-data"),
            snapshot_every: 500,
            fsync: true,
            clock: ClockMode::Logical,
            tick_seconds: 60,
            admin_token: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ServiceConfig {
    pub server: ServerSettings,
    pub platform: PlatformConfig,
}

impl ServiceConfig {
    /// Parses a TOML document. Relative paths (data directory, lexicon) are
    /// resolved against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let server = match table.remove("server") {
            Some(v) => v.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?,
            None => ServerSettings::default(),
        };
        let platform = PlatformConfig::from_table(table, base_dir);
        let mut problems = Vec::new();
        server.validate(&mut problems);
        let platform = match platform {
            Ok(p) => p,
            Err(ConfigError::Invalid(more)) => {
                problems.extend(more);
                return Err(ConfigError::Invalid(problems));
            }
            Err(e) => return Err(e),
        };
        if !problems.is_empty() {
            return Err(ConfigError::Invalid(problems));
        }
        let mut config = Self { server, platform };
        if config.server.data_dir.is_relative() {
            config.server.data_dir = base_dir.join(&config.server.data_dir);
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// `PANVAS_CONFIG` wins over the command line flag, which wins over
    /// `./panvas.toml`. With none of them present the defaults apply.
    pub fn locate(flag: Option<&Path>) -> Option<PathBuf> {
        if let Some(env) = std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()) {
            return Some(PathBuf::from(env));
        }
        if let Some(flag) = flag {
            return Some(flag.to_path_buf());
        }
        let default = PathBuf::from(DEFAULT_CONFIG);
        default.exists().then_some(default)
    }

    pub fn resolve(flag: Option<&Path>) -> Result<Self, ConfigError> {
        match Self::locate(flag) {
            Some(path) => Self::load(&path),
            None => Ok(Self::default()),
        }
    }
}

impl ServerSettings {
    fn validate(&self, problems: &mut Vec<String>) {
        if self.listen.parse::<std::net::SocketAddr>().is_err() {
            problems.push(format!("server.listen is not a socket address: {}", self.listen));
        }
        if self.snapshot_every == 0 {
            problems.push("server.snapshot_every must be positive".into());
        }
        if self.tick_seconds == 0 {
            problems.push("server.tick_seconds must be positive".into());
        }
        if self.admin_token.as_deref().is_some_and(str::is_empty) {
            problems.push("server.admin_token must not be empty".into());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn server_table_is_split_off() {
        let c = ServiceConfig::from_toml_str(
            "[server]\nlisten = \"0.0.0.0:9000\"\ndata_dir = \"d\"\n[market]\ndefault_fee_bps = 100\n",
            Path::new("/srv"),
        )
        .unwrap();
        assert_eq!(c.server.listen, "0.0.0.0:9000");
        assert_eq!(c.server.data_dir, PathBuf::from("/srv/d"));
        assert_eq!(c.platform.market.default_fee_bps, 100);
    }

    #[test]
    fn problems_from_both_halves_are_reported_together() {
        let err = ServiceConfig::from_toml_str(
            "[server]\nlisten = \"nope\"\n[ledger]\nvip_price = 0\n",
            Path::new("."),
        )
        .unwrap_err();
        let ConfigError::Invalid(problems) = err else { panic!("{err}") };
        assert_eq!(problems.len(), 2);
        assert!(ServiceConfig::from_toml_str("[server]\nport = 1\n", Path::new(".")).is_err());
    }
}
