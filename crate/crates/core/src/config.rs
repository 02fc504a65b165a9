//! Application configuration: TOML file, environment and command-line
//! overrides, and provider construction.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::provider::{
    AuditedProvider, LimitedProvider, LiveConfig, LiveProvider, MockFixture, MockProvider, Provider, RetryPolicy,
    RetryingProvider, DEFAULT_MAX_OUTPUT_TOKENS,
};

pub const API_KEY_VAR: &str = "PROMPTFORGE_API_KEY";
pub const CONFIG_PATH_VAR: &str = "PROMPTFORGE_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error in {path}: {message}")]
    Parse { path: String, message: String },
    #[error("live provider requires the {API_KEY_VAR} environment variable")]
    MissingApiKey,
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Credential that never appears in debug or display output.
#[derive(Clone, Default, PartialEq, Eq)]
pub struct Secret(String);

impl Secret {
    pub fn new(value: impl Into<String>) -> Self {
        Self(value.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(<redacted>)")
    }
}

impl fmt::Display for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("<redacted>")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Mock,
    Live,
}

impl std::str::FromStr for ProviderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mock" => Ok(Self::Mock),
            "live" => Ok(Self::Live),
            other => Err(format!("unknown provider kind {other:?}, expected mock or live")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSection {
    pub kind: ProviderKind,
    /// Model used for labeling, mapping and template generation.
    pub chat_model: String,
    /// Model that answers benchmark problems.
    pub answer_model: String,
    pub embedding_model: String,
    pub base_url: String,
    pub timeout_secs: u64,
    pub concurrency: usize,
    pub max_output_tokens: u32,
    pub mock_seed: u64,
    pub mock_fixture: Option<PathBuf>,
    pub audit_log: Option<PathBuf>,
}

impl Default for ProviderSection {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            chat_model: "gemini-2.5-pro".into(),
            answer_model: "gemini-2.0-flash".into(),
            embedding_model: "gemini-embedding-exp-03-07".into(),
            base_url: "https://generativelanguage.googleapis.com/v1beta/openai".into(),
            timeout_secs: 300,
            concurrency: 4,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            mock_seed: 0,
            mock_fixture: None,
            audit_log: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemperatureSection {
    /// Sampling temperature for knowledge-base labeling and mapping.
    pub knowledge_base: f64,
    /// Sampling temperature for template generation.
    pub generation: f64,
    /// Default answering temperature for `eval run`.
    pub evaluation: f64,
    pub sweep: Vec<f64>,
}

impl Default for TemperatureSection {
    fn default() -> Self {
        Self {
            knowledge_base: 1.0,
            generation: 1.0,
            evaluation: 0.0,
            sweep: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.3],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathSection {
    /// Catalog JSON; the built-in catalog when unset.
    pub catalog: Option<PathBuf>,
    pub kb: Option<PathBuf>,
    pub fixtures: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub provider: ProviderSection,
    pub retry: RetryPolicy,
    pub temperatures: TemperatureSection,
    pub paths: PathSection,
    #[serde(skip)]
    pub api_key: Option<Secret>,
}

/// Values given on the command line; they win over file and environment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigOverrides {
    pub provider: Option<ProviderKind>,
    pub concurrency: Option<usize>,
    pub mock_seed: Option<u64>,
    pub mock_fixture: Option<PathBuf>,
    pub audit_log: Option<PathBuf>,
}

impl AppConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = &self.provider;
        if p.concurrency == 0 {
            return Err(ConfigError::Invalid("provider.concurrency must be at least 1".into()));
        }
        if p.max_output_tokens == 0 {
            return Err(ConfigError::Invalid(
                "provider.max_output_tokens must be at least 1".into(),
            ));
        }
        if self.retry.max_attempts == 0 {
            return Err(ConfigError::Invalid("retry.max_attempts must be at least 1".into()));
        }
        if p.kind == ProviderKind::Live {
            for (name, value) in [
                ("chat_model", &p.chat_model),
                ("answer_model", &p.answer_model),
                ("embedding_model", &p.embedding_model),
                ("base_url", &p.base_url),
            ] {
                if value.trim().is_empty() {
                    return Err(ConfigError::Invalid(format!(
                        "provider.{name} must be set for the live provider"
                    )));
                }
            }
            if self.api_key.is_none() {
                return Err(ConfigError::MissingApiKey);
            }
        }
        Ok(())
    }

    /// Builds the provider stack: mock, or live with retry and a concurrency
    /// limit; an audit log wraps either when configured.
    pub fn build_provider(&self) -> Result<Arc<dyn Provider>, ConfigError> {
        let p = &self.provider;
        let base: Arc<dyn Provider> = match p.kind {
            ProviderKind::Mock => {
                let mock = match &p.mock_fixture {
                    Some(path) => {
                        let fixture = MockFixture::load(path).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                        MockProvider::from_fixture(fixture, p.mock_seed)
                            .map_err(|e| ConfigError::Invalid(e.to_string()))?
                    }
                    None => MockProvider::new(p.mock_seed),
                };
                Arc::new(mock)
            }
            ProviderKind::Live => {
                let key = self.api_key.as_ref().ok_or(ConfigError::MissingApiKey)?;
                let live = LiveProvider::new(LiveConfig {
                    base_url: p.base_url.clone(),
                    api_key: key.expose().to_string(),
                    timeout: Duration::from_secs(p.timeout_secs),
                });
                Arc::new(LimitedProvider::new(
                    RetryingProvider::new(live, self.retry),
                    p.concurrency,
                ))
            }
        };
        match &p.audit_log {
            Some(path) => {
                let audited = AuditedProvider::new(base, path).map_err(|source| ConfigError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                Ok(Arc::new(audited))
            }
            None => Ok(base),
        }
    }
}

fn env_parse<T: std::str::FromStr>(env: &HashMap<String, String>, var: &str) -> Result<Option<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    env.get(var)
        .filter(|v| !v.trim().is_empty())
        .map(|v| {
            v.trim()
                .parse::<T>()
                .map_err(|e| ConfigError::Invalid(format!("{var}: {e}")))
        })
        .transpose()
}

/// Merges file, environment and flags, in increasing precedence.
///
/// The file is `path`, else the file named by `PROMPTFORGE_CONFIG`, else none
/// (built-in defaults).
pub fn load_config(
    path: Option<&Path>,
    env: &HashMap<String, String>,
    overrides: &ConfigOverrides,
) -> Result<AppConfig, ConfigError> {
    let path = path
        .map(Path::to_path_buf)
        .or_else(|| env.get(CONFIG_PATH_VAR).filter(|v| !v.is_empty()).map(PathBuf::from));
    let mut cfg = match &path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                path: p.display().to_string(),
                source,
            })?;
            AppConfig::from_toml(&text, &p.display().to_string())?
        }
        None => AppConfig::default(),
    };

    if let Some(kind) = env_parse::<ProviderKind>(env, "PROMPTFORGE_PROVIDER")? {
        cfg.provider.kind = kind;
    }
    if let Some(n) = env_parse::<usize>(env, "PROMPTFORGE_CONCURRENCY")? {
        cfg.provider.concurrency = n;
    }
    if let Some(url) = env.get("PROMPTFORGE_BASE_URL").filter(|v| !v.is_empty()) {
        cfg.provider.base_url = url.clone();
    }
    cfg.api_key = env
        .get(API_KEY_VAR)
        .filter(|v| !v.trim().is_empty())
        .map(|v| Secret::new(v.trim()));

    if let Some(kind) = overrides.provider {
        cfg.provider.kind = kind;
    }
    if let Some(n) = overrides.concurrency {
        cfg.provider.concurrency = n;
    }
    if let Some(seed) = overrides.mock_seed {
        cfg.provider.mock_seed = seed;
    }
    if let Some(f) = &overrides.mock_fixture {
        cfg.provider.mock_fixture = Some(f.clone());
    }
    if let Some(a) = &overrides.audit_log {
        cfg.provider.audit_log = Some(a.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> HashMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    fn write(text: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), text).unwrap();
        f
    }

    #[test]
    fn mock_needs_no_credentials() {
        let f = write("[provider]\nkind = \"mock\"\n");
        let cfg = load_config(Some(f.path()), &env(&[]), &ConfigOverrides::default()).unwrap();
        assert_eq!(cfg.provider.kind, ProviderKind::Mock);
        assert_eq!(cfg.provider.chat_model, "gemini-2.5-pro");
        assert_eq!(cfg.provider.embedding_model, "gemini-embedding-exp-03-07");
    }

    #[test]
    fn live_without_key_names_the_variable() {
        let f = write("[provider]\nkind = \"live\"\n");
        let err = load_config(Some(f.path()), &env(&[]), &ConfigOverrides::default()).unwrap_err();
        assert!(err.to_string().contains(API_KEY_VAR));
        let cfg = load_config(
            Some(f.path()),
            &env(&[(API_KEY_VAR, "sk-secret")]),
            &ConfigOverrides::default(),
        )
        .unwrap();
        let shown = format!("{cfg:?}");
        assert!(!shown.contains("sk-secret"));
    }

    #[test]
    fn precedence_file_env_flag() {
        let f = write("[provider]\nconcurrency = 2\n");
        let e = env(&[("PROMPTFORGE_CONCURRENCY", "6")]);
        let cfg = load_config(Some(f.path()), &e, &ConfigOverrides::default()).unwrap();
        assert_eq!(cfg.provider.concurrency, 6);
        let flags = ConfigOverrides {
            concurrency: Some(9),
            ..Default::default()
        };
        assert_eq!(load_config(Some(f.path()), &e, &flags).unwrap().provider.concurrency, 9);
        let cfg = load_config(
            None,
            &env(&[(CONFIG_PATH_VAR, f.path().to_str().unwrap())]),
            &Default::default(),
        )
        .unwrap();
        assert_eq!(cfg.provider.concurrency, 2);
    }

    #[test]
    fn bad_values_rejected() {
        let f = write("[provider]\nconcurrency = 0\n");
        assert!(matches!(
            load_config(Some(f.path()), &env(&[]), &ConfigOverrides::default()),
            Err(ConfigError::Invalid(_))
        ));
        let f = write("[provider]\nunknown_key = 1\n");
        assert!(matches!(
            load_config(Some(f.path()), &env(&[]), &ConfigOverrides::default()),
            Err(ConfigError::Parse { .. })
        ));
    }

    #[test]
    fn retry_section_partial() {
        let cfg = AppConfig::from_toml("[retry]\nmax_attempts = 3\n", "inline").unwrap();
        assert_eq!(cfg.retry.max_attempts, 3);
        assert_eq!(cfg.retry.initial_delay_ms, 500);
    }
}
