//! Wiring for a deployment: opens storage, builds providers and the engine,
//! and implements the maintenance commands (seed, reembed, report,
//! transcript export, symbol captioning).

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::analytics::{self, Annotation, OverlapOptions, Period, UsageReport};
use crate::cards::TranslationMemory;
use crate::config::{ProviderMode, ServiceConfig};
use crate::domain::DyadId;
use crate::guide::add_example_reference;
use crate::provider::mock::MockHandles;
use crate::provider::{
    AssetSink, CompletionOutput, CompletionRequest, PromptContext, ProviderSet,
    StructuredCompleter, TaskTag,
};
use crate::session::{Clock, Engine, Journal, Services, SystemClock};
use crate::similarity::{SimilarityStore, SymbolRecord, EXAMPLE_TRANSLATIONS, SYMBOL_CAPTIONS};
use crate::store::FileStore;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Store(#[from] crate::store::StoreError),
    #[error(transparent)]
    Similarity(#[from] crate::similarity::SimilarityError),
    #[error(transparent)]
    Memory(#[from] crate::cards::MemoryError),
    #[error(transparent)]
    Session(#[from] crate::session::SessionError),
    #[error(transparent)]
    Analytics(#[from] crate::analytics::AnalyticsError),
    #[error("provider setup failed: {0}")]
    Provider(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}, line {line}: {message}")]
    Seed {
        path: String,
        line: usize,
        message: String,
    },
}

fn open(path: &Path) -> Result<File, AppError> {
    File::open(path).map_err(|source| AppError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub struct App {
    pub config: ServiceConfig,
    pub store: Arc<FileStore>,
    pub engine: Arc<Engine>,
    /// Present in mock mode, for inspection.
    pub mocks: Option<MockHandles>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub memory_added: usize,
    pub memory_size: usize,
    pub examples_added: usize,
    pub symbols_added: usize,
}

impl App {
    pub fn open(config: ServiceConfig) -> Result<Self, AppError> {
        Self::open_with_clock(config, Arc::new(SystemClock))
    }

    pub fn open_with_clock(config: ServiceConfig, clock: Arc<dyn Clock>) -> Result<Self, AppError> {
        let store = Arc::new(FileStore::open(&config.storage.path)?);
        let assets: Arc<dyn AssetSink> = store.clone();
        let retries = config.providers.repair_retries;
        let (providers, mocks) = match config.providers.mode {
            ProviderMode::Mock => {
                let handles = MockHandles::new(config.providers.seed);
                if let Some(dir) = &config.providers.mock_transcripts {
                    handles
                        .transcriber
                        .load_fixture_dir(dir)
                        .map_err(|source| AppError::Io {
                            path: dir.display().to_string(),
                            source,
                        })?;
                }
                let (set, handles) = ProviderSet::mock_with(handles, retries, Some(assets.clone()));
                (set, Some(handles))
            }
            ProviderMode::Live => {
                let live = config.providers.live.as_ref().ok_or_else(|| {
                    AppError::Provider("live mode without [providers.live]".into())
                })?;
                let set = ProviderSet::live(live, retries, Some(assets.clone()))
                    .map_err(|e| AppError::Provider(e.to_string()))?;
                (set, None)
            }
        };
        let pool = Arc::new(SimilarityStore::persistent(
            providers.embedder.clone(),
            &store.collections_dir(),
        )?);
        let memory = Arc::new(TranslationMemory::persistent(&store.memory_path())?);
        let services = Services {
            providers,
            pool,
            memory,
            assets: Some(assets),
        };
        let journal: Arc<dyn Journal> = store.clone();
        let engine = Engine::new(services, config.engine_config(), clock, Some(journal));
        engine.restore(store.load_profiles()?, store.load_sessions()?)?;
        Ok(Self {
            config,
            store,
            engine: Arc::new(engine),
            mocks,
        })
    }

    /// Loads the seed files named in the config. Re-seeding the same files
    /// adds nothing.
    pub fn seed_from_config(&self) -> Result<SeedSummary, AppError> {
        let seed = self.config.seed.clone();
        self.seed(
            seed.translation_memory.as_deref(),
            seed.example_translations.as_deref(),
            seed.symbols.as_deref(),
        )
    }

    pub fn seed(
        &self,
        translation_memory: Option<&Path>,
        example_translations: Option<&Path>,
        symbols: Option<&Path>,
    ) -> Result<SeedSummary, AppError> {
        let services = self.engine.services();
        let mut summary = SeedSummary::default();
        if let Some(path) = translation_memory {
            summary.memory_added = services
                .memory
                .load_records(open(path)?, Some(&services.pool))?;
        }
        if let Some(path) = example_translations {
            summary.examples_added = seed_examples(&services.pool, open(path)?, path)?;
        }
        if let Some(path) = symbols {
            summary.symbols_added = seed_symbols(&services.pool, open(path)?, path)?;
        }
        summary.memory_size = services.memory.len();
        Ok(summary)
    }

    /// Recomputes embeddings for every collection; returns entry counts.
    pub fn reembed(&self) -> Result<BTreeMap<String, usize>, AppError> {
        let pool = &self.engine.services().pool;
        let mut counts = BTreeMap::new();
        for name in pool.collection_names() {
            counts.insert(name.clone(), pool.reembed(&name)?);
        }
        Ok(counts)
    }

    pub fn report(
        &self,
        period: Option<Period>,
        annotations: &[Annotation],
    ) -> Result<UsageReport, AppError> {
        Ok(analytics::build_report(
            &self.engine.sessions(),
            &self.engine.dyads(),
            period,
            annotations,
            &OverlapOptions::default(),
        )?)
    }

    pub fn transcript(&self, dyad_id: &DyadId, date: NaiveDate) -> Result<String, AppError> {
        self.engine.dyad(dyad_id)?;
        Ok(analytics::export_daily_transcript(
            &self.engine.sessions(),
            dyad_id,
            date,
        ))
    }
}

#[derive(Debug, Deserialize)]
struct ExamplePair {
    source: String,
    target: String,
}

fn seed_examples(
    pool: &SimilarityStore,
    reader: impl Read,
    path: &Path,
) -> Result<usize, AppError> {
    let existing: HashSet<String> = pool
        .snapshot(EXAMPLE_TRANSLATIONS)
        .map(|c| c.entries().iter().map(|e| e.key_text.clone()).collect())
        .unwrap_or_default();
    let mut added = 0;
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|source| AppError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: ExamplePair = serde_json::from_str(&line).map_err(|e| AppError::Seed {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if existing.contains(&pair.source) {
            continue;
        }
        add_example_reference(pool, &pair.source, &pair.target)?;
        added += 1;
    }
    Ok(added)
}

fn seed_symbols(pool: &SimilarityStore, reader: impl Read, path: &Path) -> Result<usize, AppError> {
    let existing: HashSet<String> = pool
        .snapshot(SYMBOL_CAPTIONS)
        .map(|c| c.entries().iter().map(|e| e.entry_id.clone()).collect())
        .unwrap_or_default();
    let mut fresh = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|source| AppError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SymbolRecord = serde_json::from_str(&line).map_err(|e| AppError::Seed {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if record.caption.trim().is_empty() {
            return Err(AppError::Seed {
                path: path.display().to_string(),
                line: i + 1,
                message: format!(
                    "symbol {} has no caption; run caption-symbols first",
                    record.symbol_id
                ),
            });
        }
        if !existing.contains(&record.symbol_id) {
            fresh.push(serde_json::to_string(&record).expect("record serializes"));
        }
    }
    Ok(pool.import_symbols(fresh.join("\n").as_bytes())?)
}

/// Symbol listing before captioning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UncaptionedSymbol {
    pub symbol_id: String,
    pub label: String,
    /// What the picture shows, in a few words.
    #[serde(default)]
    pub description: String,
    pub image_path: String,
    #[serde(default)]
    pub caption: Option<String>,
}

/// Writes a [`SymbolRecord`] line per input line, generating a caption for
/// symbols without one. A failed generation falls back to the label.
pub fn caption_symbols(
    completer: &StructuredCompleter,
    reader: impl Read,
    mut writer: impl Write,
) -> Result<usize, AppError> {
    let mut written = 0;
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|source| AppError::Io {
            path: "input".into(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let symbol: UncaptionedSymbol =
            serde_json::from_str(&line).map_err(|e| AppError::Seed {
                path: "input".into(),
                line: i + 1,
                message: e.to_string(),
            })?;
        let caption = match symbol.caption.filter(|c| !c.trim().is_empty()) {
            Some(caption) => caption,
            None => {
                let context = PromptContext {
                    label: Some(symbol.label.clone()),
                    input: Some(symbol.description.clone()),
                    ..Default::default()
                };
                match completer.complete(CompletionRequest::new(TaskTag::Caption, context)) {
                    Ok(CompletionOutput::Text(text)) => text,
                    _ => symbol.label.clone(),
                }
            }
        };
        let record = SymbolRecord {
            symbol_id: symbol.symbol_id,
            label: symbol.label,
            caption,
            image_path: symbol.image_path,
        };
        writeln!(
            writer,
            "{}",
            serde_json::to_string(&record).expect("record serializes")
        )
        .map_err(|source| AppError::Io {
            path: "output".into(),
            source,
        })?;
        written += 1;
    }
    Ok(written)
}
