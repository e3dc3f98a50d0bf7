//! Child-turn card decks: Topic/Action generation, Emotion curation, the
//! fixed Core set, label localization through a translation memory with
//! few-shot fallback, and symbol matching with custom-image priority.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::domain::{
    core_card_set, CardCategory, CardIdentity, ConversationTopic, DialogueMessage, DyadProfile,
    EmotionLabel, ImageRef, LocalePair, SessionId,
};
use crate::guide::LocalizedText;
use crate::provider::{
    normalize_label, CompletionOutput, CompletionRequest, Constraints, Exemplar, PromptContext,
    PromptLine, ProviderSet, StructuredCompleter, TaskTag,
};
use crate::similarity::{SimilarityError, SimilarityStore, LABEL_TRANSLATIONS, SYMBOL_CAPTIONS};

pub const CARDS_PER_CATEGORY: usize = 4;
pub const LABEL_EXEMPLARS: usize = 5;
pub const DEFAULT_SYMBOL_THRESHOLD: f64 = 0.35;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CardDeck {
    pub deck_id: String,
    pub session_id: SessionId,
    pub turn_index: usize,
    pub refresh_ordinal: usize,
    pub cards: BTreeMap<CardCategory, Vec<CardIdentity>>,
}

impl CardDeck {
    pub fn category(&self, category: CardCategory) -> &[CardIdentity] {
        self.cards
            .get(&category)
            .map(Vec::as_slice)
            .unwrap_or_default()
    }

    pub fn all_cards(&self) -> impl Iterator<Item = &CardIdentity> {
        self.cards.values().flatten()
    }

    pub fn find(&self, card_id: &str) -> Option<&CardIdentity> {
        self.all_cards().find(|c| c.card_id == card_id)
    }

    pub fn labels(&self, category: CardCategory) -> Vec<String> {
        self.category(category)
            .iter()
            .map(|c| c.label_canonical.clone())
            .collect()
    }

    pub fn emotions(&self) -> Vec<EmotionLabel> {
        self.category(CardCategory::Emotion)
            .iter()
            .filter_map(|c| EmotionLabel::parse(&c.label_canonical))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Seeded,
    Learned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub category: CardCategory,
    pub label_canonical: String,
    pub label_localized: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

#[derive(Debug, thiserror::Error)]
pub enum MemoryError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
}

/// Exact `(category, canonical label)` to localized label cache. Grows only.
#[derive(Debug, Default)]
pub struct TranslationMemory {
    entries: RwLock<BTreeMap<(CardCategory, String), (String, Provenance)>>,
    log_path: Option<PathBuf>,
}

impl TranslationMemory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Memory backed by an append-only JSONL file, loaded if present.
    pub fn persistent(path: &Path) -> Result<Self, MemoryError> {
        let memory = Self::new();
        if path.exists() {
            memory.load_records(File::open(path)?, None)?;
        }
        Ok(Self {
            log_path: Some(path.to_path_buf()),
            ..memory
        })
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.read().is_empty()
    }

    pub fn lookup(&self, category: CardCategory, label: &str) -> Option<String> {
        self.entries
            .read()
            .get(&(category, label.to_string()))
            .map(|(v, _)| v.clone())
    }

    pub fn provenance(&self, category: CardCategory, label: &str) -> Option<Provenance> {
        self.entries
            .read()
            .get(&(category, label.to_string()))
            .map(|(_, p)| *p)
    }

    /// Inserts if absent; returns whether the entry is new.
    pub fn insert(
        &self,
        category: CardCategory,
        label: &str,
        localized: &str,
        provenance: Provenance,
    ) -> Result<bool, MemoryError> {
        {
            let mut entries = self.entries.write();
            let key = (category, label.to_string());
            if entries.contains_key(&key) {
                return Ok(false);
            }
            entries.insert(key, (localized.to_string(), provenance));
        }
        if let Some(path) = &self.log_path {
            let mut file = OpenOptions::new().create(true).append(true).open(path)?;
            let record = MemoryRecord {
                category,
                label_canonical: label.to_string(),
                label_localized: localized.to_string(),
                provenance: Some(provenance),
            };
            writeln!(
                file,
                "{}",
                serde_json::to_string(&record).expect("record serializes")
            )?;
        }
        Ok(true)
    }

    pub fn records(&self) -> Vec<MemoryRecord> {
        self.entries
            .read()
            .iter()
            .map(
                |((category, label), (localized, provenance))| MemoryRecord {
                    category: *category,
                    label_canonical: label.clone(),
                    label_localized: localized.clone(),
                    provenance: Some(*provenance),
                },
            )
            .collect()
    }

    /// Reads `{category, label_canonical, label_localized}` lines. With a
    /// similarity store, every new entry also joins the label reference pool.
    pub fn load_records(
        &self,
        reader: impl Read,
        pool: Option<&SimilarityStore>,
    ) -> Result<usize, MemoryError> {
        let mut added = 0;
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: MemoryRecord =
                serde_json::from_str(&line).map_err(|e| MemoryError::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            if record.label_canonical.trim().is_empty() {
                return Err(MemoryError::Parse {
                    line: i + 1,
                    message: "label_canonical is empty".into(),
                });
            }
            let provenance = record.provenance.unwrap_or(Provenance::Seeded);
            if self.insert(
                record.category,
                &record.label_canonical,
                &record.label_localized,
                provenance,
            )? {
                if let Some(pool) = pool {
                    add_label_reference(pool, &record)?;
                }
                added += 1;
            }
        }
        Ok(added)
    }
}

pub fn add_label_reference(
    pool: &SimilarityStore,
    record: &MemoryRecord,
) -> Result<String, SimilarityError> {
    pool.add_entry(
        LABEL_TRANSLATIONS,
        &record.label_canonical,
        json!({ "category": record.category, "localized": record.label_localized }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SymbolQuery {
    /// Query captions with the source-locale label.
    #[default]
    Canonical,
    /// Query captions with the localized label.
    Localized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeckSettings {
    pub symbol_threshold: f64,
    pub symbol_query: SymbolQuery,
}

impl Default for DeckSettings {
    fn default() -> Self {
        Self {
            symbol_threshold: DEFAULT_SYMBOL_THRESHOLD,
            symbol_query: SymbolQuery::Canonical,
        }
    }
}

pub const FALLBACK_TOPICS: &[&str] = &[
    "Home", "Friend", "Toy", "Snack", "Park", "Book", "Music", "Car", "Ball", "School", "Bath",
    "Bed", "Water", "Picture", "Outside", "Family",
];

pub const FALLBACK_ACTIONS: &[&str] = &[
    "Play", "Eat", "Go", "Look", "Help", "Read", "Rest", "Drink", "Sing", "Walk", "Draw", "Wait",
    "Stop", "Want", "Give", "Come",
];

/// Picks `count` labels from `sources` in order, skipping anything in
/// `taken`; numbered variants cover an exhausted list.
fn fill_labels(sources: &[String], count: usize, taken: &mut HashSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(count);
    for label in sources {
        if out.len() == count {
            return out;
        }
        if !label.trim().is_empty() && taken.insert(normalize_label(label)) {
            out.push(label.trim().to_string());
        }
    }
    let mut n = 2;
    while out.len() < count {
        for base in sources {
            if out.len() == count {
                break;
            }
            let label = format!("{} {n}", base.trim());
            if taken.insert(normalize_label(&label)) {
                out.push(label);
            }
        }
        n += 1;
    }
    out
}

/// Deterministic Topic/Action labels: the child's interests, then built-in
/// fillers.
pub fn fallback_topic_action(
    dyad: &DyadProfile,
    exclusions: &[String],
) -> (Vec<String>, Vec<String>) {
    let mut taken: HashSet<String> = exclusions.iter().map(|l| normalize_label(l)).collect();
    let topic_sources: Vec<String> = dyad
        .interests
        .iter()
        .cloned()
        .chain(FALLBACK_TOPICS.iter().map(|s| s.to_string()))
        .collect();
    let topic = fill_labels(&topic_sources, CARDS_PER_CATEGORY, &mut taken);
    let action_sources: Vec<String> = FALLBACK_ACTIONS.iter().map(|s| s.to_string()).collect();
    let action = fill_labels(&action_sources, CARDS_PER_CATEGORY, &mut taken);
    (topic, action)
}

pub fn generate_topic_action(
    completer: &StructuredCompleter,
    history: &[DialogueMessage],
    dyad: &DyadProfile,
    topic: &ConversationTopic,
    exclusions: &[String],
) -> (Vec<String>, Vec<String>) {
    let context = PromptContext {
        dyad_summary: Some(dyad.summary()),
        child_name: Some(dyad.child_name.clone()),
        topic: Some(topic.describe()),
        dialogue: PromptLine::from_history(history),
        constraints: Constraints {
            count: Some(CARDS_PER_CATEGORY),
            excluded_labels: exclusions.to_vec(),
            ..Default::default()
        },
        ..Default::default()
    };
    match completer.complete(CompletionRequest::new(TaskTag::GenerateCards, context)) {
        Ok(CompletionOutput::Cards(cards)) => (cards.topic, cards.action),
        _ => fallback_topic_action(dyad, exclusions),
    }
}

/// Four distinct emotions. Unknown or excluded provider picks are dropped and
/// the gap is filled from [`EmotionLabel::PRIORITY`].
pub fn curate_emotions(
    completer: &StructuredCompleter,
    history: &[DialogueMessage],
    excluded: &[EmotionLabel],
) -> Vec<EmotionLabel> {
    let available = EmotionLabel::ALL
        .iter()
        .filter(|e| !excluded.contains(e))
        .count();
    let excluded: &[EmotionLabel] = if available < CARDS_PER_CATEGORY {
        &[]
    } else {
        excluded
    };
    let context = PromptContext {
        dialogue: PromptLine::from_history(history),
        constraints: Constraints {
            count: Some(CARDS_PER_CATEGORY),
            excluded_emotions: excluded.to_vec(),
            ..Default::default()
        },
        ..Default::default()
    };
    let proposed =
        match completer.complete(CompletionRequest::new(TaskTag::CurateEmotions, context)) {
            Ok(CompletionOutput::Emotions(list)) => list,
            _ => Vec::new(),
        };
    let mut chosen: Vec<EmotionLabel> = Vec::with_capacity(CARDS_PER_CATEGORY);
    let candidates = proposed
        .iter()
        .filter_map(|s| EmotionLabel::parse(s))
        .chain(EmotionLabel::PRIORITY);
    for emotion in candidates {
        if chosen.len() == CARDS_PER_CATEGORY {
            break;
        }
        if !excluded.contains(&emotion) && !chosen.contains(&emotion) {
            chosen.push(emotion);
        }
    }
    chosen
}

/// Emotions to exclude for the next deck of a turn, given the decks already
/// shown in it. Once fewer than four unseen emotions remain the pool resets.
pub fn emotion_exclusions(decks: &[CardDeck]) -> Vec<EmotionLabel> {
    let mut seen: Vec<EmotionLabel> = Vec::new();
    let exhausted =
        |seen: &Vec<EmotionLabel>| EmotionLabel::ALL.len() - seen.len() < CARDS_PER_CATEGORY;
    for deck in decks {
        if exhausted(&seen) {
            seen.clear();
        }
        for e in deck.emotions() {
            if !seen.contains(&e) {
                seen.push(e);
            }
        }
    }
    if exhausted(&seen) {
        seen.clear();
    }
    seen
}

pub fn label_exemplars(
    pool: &SimilarityStore,
    label: &str,
) -> Result<Vec<Exemplar>, SimilarityError> {
    let hits = match pool.top_k(LABEL_TRANSLATIONS, label, LABEL_EXEMPLARS) {
        Ok(hits) => hits,
        Err(SimilarityError::UnknownCollection(_)) => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    Ok(hits
        .into_iter()
        .map(|hit| Exemplar {
            target: hit.entry.payload["localized"]
                .as_str()
                .unwrap_or_default()
                .to_string(),
            entry_id: hit.entry.entry_id,
            source: hit.entry.key_text,
        })
        .collect())
}

/// Memory hit: stored value, no provider call. Miss: few-shot translation
/// with the five nearest references, written through on success.
pub fn localize_label(
    completer: &StructuredCompleter,
    memory: &TranslationMemory,
    pool: &SimilarityStore,
    category: CardCategory,
    label: &str,
    locales: &LocalePair,
) -> LocalizedText {
    if locales.is_identity() {
        return LocalizedText {
            text: label.to_string(),
            untranslated: false,
        };
    }
    if let Some(hit) = memory.lookup(category, label) {
        return LocalizedText {
            text: hit,
            untranslated: false,
        };
    }
    let untranslated = LocalizedText {
        text: label.to_string(),
        untranslated: true,
    };
    let Ok(exemplars) = label_exemplars(pool, label) else {
        return untranslated;
    };
    let context = PromptContext {
        label: Some(label.to_string()),
        exemplars,
        constraints: Constraints {
            category: Some(category),
            locales: Some(locales.clone()),
            ..Default::default()
        },
        ..Default::default()
    };
    match completer.complete(CompletionRequest::new(TaskTag::TranslateLabel, context)) {
        Ok(CompletionOutput::Text(text)) => {
            let record = MemoryRecord {
                category,
                label_canonical: label.to_string(),
                label_localized: text.clone(),
                provenance: Some(Provenance::Learned),
            };
            if let Ok(true) = memory.insert(category, label, &text, Provenance::Learned) {
                // The reference pool is best-effort; the memory entry is what
                // guarantees later hits.
                let _ = add_label_reference(pool, &record);
            }
            LocalizedText {
                text,
                untranslated: false,
            }
        }
        _ => untranslated,
    }
}

/// Custom photo if the dyad registered one for `label`, else the best symbol
/// caption at or above `threshold`, else a placeholder.
pub fn match_symbol(
    dyad: &DyadProfile,
    label: &str,
    query: &str,
    symbols: &SimilarityStore,
    threshold: f64,
) -> ImageRef {
    if let Some(asset_id) = dyad.custom_image_for(label) {
        return ImageRef::Custom {
            asset_id: asset_id.to_string(),
        };
    }
    match symbols.top_k(SYMBOL_CAPTIONS, query, 1) {
        Ok(hits) => match hits.first() {
            Some(best) if best.score >= threshold => ImageRef::Symbol {
                symbol_id: best.entry.entry_id.clone(),
            },
            _ => ImageRef::Placeholder,
        },
        Err(_) => ImageRef::Placeholder,
    }
}

/// Inputs for one deck.
#[derive(Debug, Clone)]
pub struct DeckRequest<'a> {
    pub session_id: &'a SessionId,
    pub turn_index: usize,
    pub refresh_ordinal: usize,
    pub history: &'a [DialogueMessage],
    pub dyad: &'a DyadProfile,
    pub topic: &'a ConversationTopic,
    /// Decks already shown during this child turn, oldest first.
    pub previous_decks: &'a [CardDeck],
}

fn category_code(category: CardCategory) -> &'static str {
    match category {
        CardCategory::Topic => "topic",
        CardCategory::Action => "action",
        CardCategory::Emotion => "emotion",
        CardCategory::Core => "core",
    }
}

/// Assembles a 16-card deck. Every sub-step has a fallback, so a deck always
/// materializes.
pub fn build_deck(
    providers: &ProviderSet,
    memory: &TranslationMemory,
    pool: &SimilarityStore,
    settings: &DeckSettings,
    request: &DeckRequest<'_>,
) -> CardDeck {
    let dyad = request.dyad;
    let locales = &dyad.locale_pair;
    let shown: Vec<String> = request
        .previous_decks
        .iter()
        .flat_map(|d| {
            d.labels(CardCategory::Topic)
                .into_iter()
                .chain(d.labels(CardCategory::Action))
        })
        .collect();
    let (topic_labels, action_labels) = generate_topic_action(
        &providers.completion,
        request.history,
        dyad,
        request.topic,
        &shown,
    );
    let emotions = curate_emotions(
        &providers.completion,
        request.history,
        &emotion_exclusions(request.previous_decks),
    );

    let prefix = format!("t{}-r{}", request.turn_index, request.refresh_ordinal);
    let make_card = |category: CardCategory, i: usize, label: String| {
        let localized = localize_label(
            &providers.completion,
            memory,
            pool,
            category,
            &label,
            locales,
        );
        let query = match settings.symbol_query {
            SymbolQuery::Canonical => label.as_str(),
            SymbolQuery::Localized => localized.text.as_str(),
        };
        let image_ref = match_symbol(dyad, &label, query, pool, settings.symbol_threshold);
        let voice_ref = providers
            .voice
            .synthesize(&localized.text, &locales.target)
            .ok();
        CardIdentity {
            card_id: format!("{prefix}-{}{i}", category_code(category)),
            category,
            label_canonical: label,
            label_localized: localized.text,
            image_ref,
            voice_ref,
        }
    };

    let mut cards = BTreeMap::new();
    cards.insert(
        CardCategory::Topic,
        topic_labels
            .into_iter()
            .enumerate()
            .map(|(i, l)| make_card(CardCategory::Topic, i, l))
            .collect(),
    );
    cards.insert(
        CardCategory::Action,
        action_labels
            .into_iter()
            .enumerate()
            .map(|(i, l)| make_card(CardCategory::Action, i, l))
            .collect(),
    );
    cards.insert(
        CardCategory::Emotion,
        emotions
            .into_iter()
            .enumerate()
            .map(|(i, e)| make_card(CardCategory::Emotion, i, e.as_str().to_string()))
            .collect(),
    );
    cards.insert(
        CardCategory::Core,
        core_card_set(dyad.parent_role)
            .into_iter()
            .enumerate()
            .map(|(i, core)| make_card(CardCategory::Core, i, core.label_canonical))
            .collect(),
    );
    CardDeck {
        deck_id: format!("{}-{prefix}", request.session_id),
        session_id: request.session_id.clone(),
        turn_index: request.turn_index,
        refresh_ordinal: request.refresh_ordinal,
        cards,
    }
}

/// Checks the per-deck invariants; returns a description of the first
/// violation.
pub fn check_deck(deck: &CardDeck, dyad: &DyadProfile) -> Result<(), String> {
    for category in CardCategory::ALL {
        let cards = deck.category(category);
        if cards.len() != CARDS_PER_CATEGORY {
            return Err(format!("{category} has {} cards", cards.len()));
        }
        let distinct: HashSet<String> = cards
            .iter()
            .map(|c| normalize_label(&c.label_canonical))
            .collect();
        if distinct.len() != CARDS_PER_CATEGORY {
            return Err(format!("{category} repeats a label"));
        }
        if cards.iter().any(|c| c.category != category) {
            return Err(format!("{category} holds a card of another category"));
        }
    }
    if deck
        .category(CardCategory::Emotion)
        .iter()
        .any(|c| EmotionLabel::parse(&c.label_canonical).is_none())
    {
        return Err("emotion outside the taxonomy".into());
    }
    let core: Vec<String> = core_card_set(dyad.parent_role)
        .into_iter()
        .map(|c| c.label_canonical)
        .collect();
    if deck.labels(CardCategory::Core) != core {
        return Err("core set differs from the fixed set".into());
    }
    Ok(())
}
