//! Service configuration, read from TOML:
//!
//! ```toml
//! workspace = "/srv/cysto"
//! bind = "127.0.0.1:8080"
//!
//! [[users]]
//! token = "s3cret"
//! user_id = "uro-1"
//! clearance = "CONFIDENTIAL"
//! role = "UROLOGIST"
//! expires_at = "2030-01-01T00:00:00Z"
//! ```

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use cysto_core::export::AccessLevel;
use cysto_core::qc::ReviewerRole;
use serde::Deserialize;
use thiserror::Error;

pub const DEFAULT_PAGE_SIZE: usize = 100;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("cannot bind {addr}: {source}")]
    BindFailure {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserEntry {
    pub token: String,
    pub user_id: String,
    pub clearance: AccessLevel,
    /// Review role; users without one cannot vote.
    #[serde(default)]
    pub role: Option<ReviewerRole>,
    #[serde(default)]
    pub expires_at: Option<DateTime<Utc>>,
}

fn default_bind() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

fn default_page_size() -> usize {
    DEFAULT_PAGE_SIZE
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub workspace: PathBuf,
    #[serde(default = "default_bind")]
    pub bind: SocketAddr,
    #[serde(default = "default_page_size")]
    pub page_size: usize,
    #[serde(default)]
    pub users: Vec<UserEntry>,
}

impl ServiceConfig {
    pub fn parse(text: &str) -> Result<Self, ServeError> {
        let config: ServiceConfig = toml::from_str(text).map_err(|e| ServeError::BadConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ServeError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServeError::BadConfig(format!("{}: {e}", path.display())))?;
        let mut config = Self::parse(&text)?;
        if config.workspace.is_relative() {
            if let Some(dir) = path.parent() {
                config.workspace = dir.join(&config.workspace);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ServeError> {
        if self.page_size == 0 {
            return Err(ServeError::BadConfig("page_size must be positive".into()));
        }
        let mut seen = HashMap::new();
        for u in &self.users {
            if u.token.trim().is_empty() || u.user_id.trim().is_empty() {
                return Err(ServeError::BadConfig("users need a token and a user_id".into()));
            }
            if let Some(other) = seen.insert(u.token.as_str(), u.user_id.as_str()) {
                return Err(ServeError::BadConfig(format!("{other} and {} share a token", u.user_id)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_users_and_defaults() {
        let c = ServiceConfig::parse(
            r#"
            workspace = "ws"
            [[users]]
            token = "t"
            user_id = "u"
            clearance = "INTERNAL"
            role = "LEADER"
            "#,
        )
        .unwrap();
        assert_eq!(c.bind, default_bind());
        assert_eq!(c.page_size, 100);
        assert_eq!(c.users[0].clearance, AccessLevel::Internal);
        assert_eq!(c.users[0].role, Some(ReviewerRole::Leader));
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "bind = \"127.0.0.1:1\"",
            "workspace = \"w\"\npage_size = 0",
            "workspace = \"w\"\n[[users]]\ntoken = \"\"\nuser_id = \"u\"\nclearance = \"PUBLIC\"",
            "workspace = \"w\"\n[[users]]\ntoken = \"t\"\nuser_id = \"u\"\nclearance = \"TOP\"",
            "workspace = \"w\"\n[[users]]\ntoken = \"t\"\nuser_id = \"a\"\nclearance = \"PUBLIC\"\n[[users]]\ntoken = \"t\"\nuser_id = \"b\"\nclearance = \"PUBLIC\"",
        ] {
            assert!(matches!(ServiceConfig::parse(text), Err(ServeError::BadConfig(_))), "{text}");
        }
    }
}
