use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use capeval_core::dataset_io::ReferenceFormat;
use capeval_core::EngineConfig;
use serde::Deserialize;

use crate::error::ConfigError;

pub const DEFAULT_QUOTA_LIMIT: usize = 5;
pub const DEFAULT_QUOTA_WINDOW_SECS: u64 = 24 * 60 * 60;
pub const DEFAULT_MAX_UPLOAD_BYTES: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub references: PathBuf,
    #[serde(default = "default_format")]
    pub format: ReferenceFormat,
}

fn default_format() -> ReferenceFormat {
    ReferenceFormat::Simple
}

/// Server configuration, read from TOML.
///
/// ```toml
/// listen = "127.0.0.1:8080"
/// token_file = "tokens.toml"
/// log_path = "submissions.jsonl"
/// quota_limit = 5
///
/// [splits.test]
/// references = "captions_test.json"
/// format = "coco_annotations"
/// ```
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    pub listen: SocketAddr,
    pub token_file: PathBuf,
    pub log_path: PathBuf,
    #[serde(default = "default_quota_limit")]
    pub quota_limit: usize,
    #[serde(default = "default_quota_window")]
    pub quota_window_secs: u64,
    #[serde(default = "default_max_upload")]
    pub max_upload_bytes: usize,
    pub splits: BTreeMap<String, SplitConfig>,
    #[serde(default)]
    pub engine: EngineConfig,
    /// Synonym classes for METEOR, one class per line.
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
}

fn default_quota_limit() -> usize {
    DEFAULT_QUOTA_LIMIT
}

fn default_quota_window() -> u64 {
    DEFAULT_QUOTA_WINDOW_SECS
}

fn default_max_upload() -> usize {
    DEFAULT_MAX_UPLOAD_BYTES
}

impl ServerConfig {
    /// Reads the config; relative paths are resolved against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.display().to_string(), e))?;
        let mut config: ServerConfig = toml::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.token_file);
        resolve(&mut config.log_path);
        if let Some(l) = config.lexicon.as_mut() {
            resolve(l);
        }
        for split in config.splits.values_mut() {
            resolve(&mut split.references);
        }
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserEntry {
    pub id: String,
    pub token: String,
    #[serde(default)]
    pub admin: bool,
    /// Overrides the server-wide quota for this user.
    #[serde(default)]
    pub quota_limit: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TokenFile {
    #[serde(default)]
    users: Vec<UserEntry>,
}

/// Parses a token file:
///
/// ```toml
/// [[users]]
/// id = "alice"
/// token = "secret"
/// admin = false
/// ```
pub fn parse_tokens(text: &str) -> Result<Vec<UserEntry>, ConfigError> {
    let file: TokenFile = toml::from_str(text)?;
    let mut seen_ids = std::collections::HashSet::new();
    let mut seen_tokens = std::collections::HashSet::new();
    for u in &file.users {
        if u.token.is_empty() {
            return Err(ConfigError::Invalid(format!("user {:?} has an empty token", u.id)));
        }
        if !seen_ids.insert(u.id.as_str()) {
            return Err(ConfigError::Invalid(format!("user {:?} listed twice", u.id)));
        }
        if !seen_tokens.insert(u.token.as_str()) {
            return Err(ConfigError::Invalid(format!("token of user {:?} is not unique", u.id)));
        }
    }
    Ok(file.users)
}

pub fn load_tokens(path: impl AsRef<Path>) -> Result<Vec<UserEntry>, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.display().to_string(), e))?;
    parse_tokens(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("server.toml");
        std::fs::write(
            &path,
            r#"
listen = "127.0.0.1:0"
token_file = "tokens.toml"
log_path = "/var/tmp/log.jsonl"

[splits.test]
references = "refs/test.json"

[engine.cider]
sigma = 5.0
"#,
        )
        .unwrap();
        let c = ServerConfig::load(&path).unwrap();
        assert_eq!(c.quota_limit, DEFAULT_QUOTA_LIMIT);
        assert_eq!(c.quota_window_secs, 86_400);
        assert_eq!(c.token_file, dir.path().join("tokens.toml"));
        assert_eq!(c.log_path, PathBuf::from("/var/tmp/log.jsonl"));
        assert_eq!(c.splits["test"].references, dir.path().join("refs/test.json"));
        assert_eq!(c.splits["test"].format, ReferenceFormat::Simple);
        assert_eq!(c.engine.cider.sigma, 5.0);
        assert_eq!(c.engine.cider.max_n, 4);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = "listen = \"127.0.0.1:0\"\ntoken_file = \"t\"\nlog_path = \"l\"\nquota = 3\n[splits]\n";
        assert!(toml::from_str::<ServerConfig>(bad).is_err());
    }

    #[test]
    fn token_file_checks() {
        let users = parse_tokens("[[users]]\nid = \"a\"\ntoken = \"x\"\n[[users]]\nid = \"b\"\ntoken = \"y\"\nadmin = true\n").unwrap();
        assert_eq!(users.len(), 2);
        assert!(users[1].admin);
        assert!(parse_tokens("[[users]]\nid = \"a\"\ntoken = \"x\"\n[[users]]\nid = \"b\"\ntoken = \"x\"\n").is_err());
        assert!(parse_tokens("[[users]]\nid = \"a\"\ntoken = \"\"\n").is_err());
    }
}
