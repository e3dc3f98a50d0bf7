//! Service configuration: a TOML file plus `DYADTALK_*` environment
//! overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cards::{DeckSettings, SymbolQuery, DEFAULT_SYMBOL_THRESHOLD};
use crate::domain::LocalePair;
use crate::provider::live::LiveConfig;
use crate::provider::DEFAULT_REPAIR_RETRIES;
use crate::session::{EngineConfig, DEFAULT_STAR_CAP};

pub const DEFAULT_MAX_UPLOAD_BYTES: usize = 10 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct ServiceConfig {
    pub server: ServerSection,
    pub storage: StorageSection,
    pub providers: ProviderSection,
    pub locale: LocaleSection,
    pub session: SessionSection,
    pub cards: CardSection,
    pub seed: SeedSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServerSection {
    pub host: String,
    pub port: u16,
    pub max_upload_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StorageSection {
    pub path: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    Mock,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderSection {
    pub mode: ProviderMode,
    /// Seed for the deterministic mocks.
    pub seed: u64,
    pub repair_retries: u32,
    /// Directory of `<clip>` + `<clip>.json` pairs the mock transcriber knows.
    pub mock_transcripts: Option<PathBuf>,
    pub live: Option<LiveConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocaleSection {
    pub source: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionSection {
    pub star_cap: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CardSection {
    pub symbol_threshold: f64,
    pub symbol_query: SymbolQuery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SeedSection {
    pub translation_memory: Option<PathBuf>,
    pub example_translations: Option<PathBuf>,
    pub symbols: Option<PathBuf>,
}

impl Default for ServerSection {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            max_upload_bytes: DEFAULT_MAX_UPLOAD_BYTES,
        }
    }
}

impl Default for StorageSection {
    fn default() -> Self {
        Self {
            path: PathBuf::from("var"),
        }
    }
}

impl Default for ProviderSection {
    fn default() -> Self {
        Self {
            mode: ProviderMode::Mock,
            seed: 7,
            repair_retries: DEFAULT_REPAIR_RETRIES,
            mock_transcripts: None,
            live: None,
        }
    }
}

impl Default for LocaleSection {
    fn default() -> Self {
        Self {
            source: "en".into(),
            target: "ko".into(),
        }
    }
}

impl Default for SessionSection {
    fn default() -> Self {
        Self {
            star_cap: DEFAULT_STAR_CAP,
        }
    }
}

impl Default for CardSection {
    fn default() -> Self {
        Self {
            symbol_threshold: DEFAULT_SYMBOL_THRESHOLD,
            symbol_query: SymbolQuery::Canonical,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{origin}:{line}:{column}: {message}")]
    Parse {
        origin: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{origin}{}: {key}: {message}", .line.map(|l| format!(":{l}")).unwrap_or_default())]
    Invalid {
        origin: String,
        line: Option<usize>,
        key: String,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// 1-based line of `key` inside `[section]` in `source`, if written there.
fn locate(source: &str, dotted: &str) -> Option<usize> {
    let (section, key) = dotted.rsplit_once('.').unwrap_or(("", dotted));
    let mut current = String::new();
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

fn line_column(source: &str, offset: usize) -> (usize, usize) {
    let before = &source[..offset.min(source.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let source = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&source, &path.display().to_string())
    }

    /// Parses and validates; `origin` names the source in diagnostics.
    pub fn parse(source: &str, origin: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(source).map_err(|e| {
            let (line, column) = e
                .span()
                .map(|s| line_column(source, s.start))
                .unwrap_or((1, 1));
            ConfigError::Parse {
                origin: origin.to_string(),
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        config.validate(source, origin)?;
        Ok(config)
    }

    /// Applies `DYADTALK_*` variables from `vars`.
    pub fn apply_env(
        &mut self,
        vars: impl IntoIterator<Item = (String, String)>,
    ) -> Result<(), ConfigError> {
        let invalid = |key: &str, message: String| ConfigError::Invalid {
            origin: "environment".into(),
            line: None,
            key: key.to_string(),
            message,
        };
        for (name, value) in vars {
            match name.as_str() {
                "DYADTALK_HOST" => self.server.host = value,
                "DYADTALK_PORT" => {
                    self.server.port = value
                        .parse()
                        .map_err(|_| invalid(&name, format!("{value:?} is not a port number")))?
                }
                "DYADTALK_STORAGE" => self.storage.path = PathBuf::from(value),
                "DYADTALK_PROVIDERS" => {
                    self.providers.mode = match value.as_str() {
                        "mock" => ProviderMode::Mock,
                        "live" => ProviderMode::Live,
                        _ => {
                            return Err(invalid(
                                &name,
                                format!("expected mock or live, got {value:?}"),
                            ))
                        }
                    }
                }
                "DYADTALK_LOCALE_SOURCE" => self.locale.source = value,
                "DYADTALK_LOCALE_TARGET" => self.locale.target = value,
                "DYADTALK_STAR_CAP" => {
                    self.session.star_cap = value
                        .parse()
                        .map_err(|_| invalid(&name, format!("{value:?} is not a count")))?
                }
                "DYADTALK_API_KEY" => {
                    if let Some(live) = &mut self.providers.live {
                        live.api_key = Some(value);
                    }
                }
                _ => {}
            }
        }
        self.validate("", "environment")
    }

    /// Checks cross-field rules. `source` is only used to point at lines.
    pub fn validate(&self, source: &str, origin: &str) -> Result<(), ConfigError> {
        let fail = |key: &str, message: &str| {
            Err(ConfigError::Invalid {
                origin: origin.to_string(),
                line: locate(source, key),
                key: key.to_string(),
                message: message.to_string(),
            })
        };
        if self.server.port == 0 {
            return fail("server.port", "port must be between 1 and 65535");
        }
        if self.server.host.trim().is_empty() {
            return fail("server.host", "host must not be empty");
        }
        if self.server.max_upload_bytes == 0 {
            return fail("server.max_upload_bytes", "upload limit must be positive");
        }
        if self.storage.path.as_os_str().is_empty() {
            return fail("storage.path", "storage path must not be empty");
        }
        if self.locale.source.trim().is_empty() {
            return fail("locale.source", "locale must not be empty");
        }
        if self.locale.target.trim().is_empty() {
            return fail("locale.target", "locale must not be empty");
        }
        if !(self.cards.symbol_threshold.is_finite()
            && (-1.0..=1.0).contains(&self.cards.symbol_threshold))
        {
            return fail("cards.symbol_threshold", "threshold must lie in [-1, 1]");
        }
        if self.providers.repair_retries > 10 {
            return fail("providers.repair_retries", "at most 10 repair retries");
        }
        if self.providers.mode == ProviderMode::Live {
            match &self.providers.live {
                None => return fail("providers.mode", "live mode needs a [providers.live] table"),
                Some(live) if live.endpoint.trim().is_empty() => {
                    return fail("providers.live.endpoint", "endpoint must not be empty")
                }
                Some(live) if live.embedding_dimension == 0 => {
                    return fail(
                        "providers.live.embedding_dimension",
                        "dimension must be positive",
                    )
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn locale_pair(&self) -> LocalePair {
        LocalePair::new(self.locale.source.clone(), self.locale.target.clone())
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            star_cap: self.session.star_cap,
            deck: DeckSettings {
                symbol_threshold: self.cards.symbol_threshold,
                symbol_query: self.cards.symbol_query,
            },
        }
    }
}
