use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use infoflow_core::Principal;
use serde::Deserialize;

pub const CONFIG_ENV: &str = "INFOFLOW_CONFIG";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad config {}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("token for {0} is not unique")]
    DuplicateToken(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrincipalEntry {
    pub token: String,
    pub user: String,
    #[serde(default)]
    pub groups: BTreeSet<String>,
}

/// Server settings, normally read from a TOML file.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    pub registry: PathBuf,
    pub audit_log: PathBuf,
    /// Members may reload the registry and read the audit log.
    #[serde(default = "default_admin_group")]
    pub admin_group: String,
    #[serde(default)]
    pub principals: Vec<PrincipalEntry>,
    /// Named credentials for http-xml resources.
    #[serde(default)]
    pub secrets: HashMap<String, String>,
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

fn default_admin_group() -> String {
    "admin".into()
}

impl ServerConfig {
    /// Reads `path`; relative registry and audit paths resolve against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: ServerConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.registry = base.join(&cfg.registry);
        cfg.audit_log = base.join(&cfg.audit_log);
        cfg.tokens()?;
        Ok(cfg)
    }

    /// Bearer token → principal.
    pub fn tokens(&self) -> Result<HashMap<String, Principal>, ConfigError> {
        let mut out = HashMap::new();
        for p in &self.principals {
            let principal = Principal::new(&p.user, &p.groups);
            if out.insert(p.token.clone(), principal).is_some() {
                return Err(ConfigError::DuplicateToken(p.user.clone()));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_and_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("server.toml");
        std::fs::write(
            &path,
            r#"
registry = "registry"
audit_log = "audit.log"

[[principals]]
token = "t-alice"
user = "alice"
groups = ["finance"]
"#,
        )
        .unwrap();
        let cfg = ServerConfig::load(&path).unwrap();
        assert_eq!(cfg.registry, dir.path().join("registry"));
        assert_eq!(cfg.admin_group, "admin");
        assert_eq!(cfg.tokens().unwrap()["t-alice"], Principal::new("alice", ["finance"]));
    }

    #[test]
    fn duplicate_tokens_rejected() {
        let cfg: ServerConfig = toml::from_str(
            r#"
registry = "r"
audit_log = "a"
principals = [{ token = "x", user = "a" }, { token = "x", user = "b" }]
"#,
        )
        .unwrap();
        assert!(matches!(cfg.tokens(), Err(ConfigError::DuplicateToken(_))));
    }
}
