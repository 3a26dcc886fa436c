//! Server configuration: a TOML file with `SOCIALTV_*` environment overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_PREFIX: &str = "SOCIALTV_";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub listen: String,
    /// `None` keeps the dataset in memory.
    pub store_path: Option<PathBuf>,
    pub snowball_on_accept: bool,
    pub max_hops: u32,
    pub session_ttl_secs: u64,
    /// Rule file replacing the built-in table.
    pub rules_path: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            listen: "127.0.0.1:8080".into(),
            store_path: None,
            snowball_on_accept: false,
            max_hops: 3,
            session_ttl_secs: 3600,
            rules_path: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("bad config file {path}: {source}")]
    Toml { path: PathBuf, source: toml::de::Error },
    #[error("bad value for {var}: `{value}`")]
    Env { var: String, value: String },
}

impl Config {
    /// Load `path` if given, then apply environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Config, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.to_path_buf(),
                    source,
                })?;
                toml::from_str(&text).map_err(|source| ConfigError::Toml {
                    path: p.to_path_buf(),
                    source,
                })?
            }
            None => Config::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    /// Apply overrides from a variable lookup. Empty `STORE_PATH` or
    /// `RULES_PATH` clears the setting.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        let var = |name: &str| get(&format!("{ENV_PREFIX}{name}")).map(|v| (format!("{ENV_PREFIX}{name}"), v));
        fn parse<T: std::str::FromStr>((var, value): (String, String)) -> Result<T, ConfigError> {
            value.trim().parse().map_err(|_| ConfigError::Env { var, value })
        }
        let path = |v: String| if v.is_empty() { None } else { Some(PathBuf::from(v)) };

        if let Some((_, v)) = var("LISTEN") {
            self.listen = v;
        }
        if let Some((_, v)) = var("STORE_PATH") {
            self.store_path = path(v);
        }
        if let Some((_, v)) = var("RULES_PATH") {
            self.rules_path = path(v);
        }
        if let Some(kv) = var("SNOWBALL_ON_ACCEPT") {
            self.snowball_on_accept = parse(kv)?;
        }
        if let Some(kv) = var("MAX_HOPS") {
            self.max_hops = parse(kv)?;
        }
        if let Some(kv) = var("SESSION_TTL_SECS") {
            self.session_ttl_secs = parse(kv)?;
        }
        Ok(())
    }
}
