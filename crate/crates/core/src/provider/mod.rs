//! Pluggable generative, embedding and speech providers.
//!
//! Every capability sits behind a small trait with a deterministic mock
//! ([`mock`]) and an HTTP-backed implementation ([`live`]). Structured text
//! generation goes through [`StructuredCompleter`], which parses the raw
//! provider output against the shape implied by the task and retries with a
//! repair hint when it does not validate.

pub mod live;
pub mod mock;
pub mod prompt;

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{
    CardCategory, DialogueMessage, EmotionLabel, FeedbackCategory, GuideDirection, Locale,
    LocalePair,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("malformed output after {attempts} attempt(s): {reason}")]
    MalformedOutput { attempts: u32, reason: String },
    #[error("input is empty")]
    EmptyInput,
    #[error("audio could not be recognized")]
    UnrecognizedAudio,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskTag {
    Inspect,
    Guides,
    Example,
    TranslateExample,
    TranslateLabel,
    GenerateCards,
    CurateEmotions,
    Caption,
}

impl TaskTag {
    pub fn expected_shape(self) -> ExpectedShape {
        match self {
            TaskTag::Inspect => ExpectedShape::Inspection,
            TaskTag::Guides => ExpectedShape::GuideList,
            TaskTag::Example
            | TaskTag::TranslateExample
            | TaskTag::TranslateLabel
            | TaskTag::Caption => ExpectedShape::Text,
            TaskTag::GenerateCards => ExpectedShape::CardLabels,
            TaskTag::CurateEmotions => ExpectedShape::EmotionList,
        }
    }

    /// Exact few-shot budget for the task; the pool may be smaller.
    pub fn exemplar_budget(self) -> usize {
        match self {
            TaskTag::TranslateExample => 3,
            TaskTag::TranslateLabel => 5,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExpectedShape {
    Inspection,
    GuideList,
    Text,
    CardLabels,
    EmotionList,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptLine {
    pub speaker: String,
    pub text: String,
}

impl PromptLine {
    /// Renders a message history for prompting; child turns become
    /// bracketed card label sequences.
    pub fn from_history(history: &[DialogueMessage]) -> Vec<PromptLine> {
        history
            .iter()
            .map(|m| PromptLine {
                speaker: format!("{:?}", m.speaker),
                text: m.render(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub entry_id: String,
    pub source: String,
    pub target: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub allowed_directions: Vec<GuideDirection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded_labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded_emotions: Vec<EmotionLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<CardCategory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<GuideDirection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locales: Option<LocalePair>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PromptContext {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dyad_summary: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub child_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
    #[serde(default)]
    pub dialogue: Vec<PromptLine>,
    /// Task input: text to inspect or translate, a guide, a symbol description.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default)]
    pub constraints: Constraints,
    #[serde(default)]
    pub exemplars: Vec<Exemplar>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub task_tag: TaskTag,
    pub context: PromptContext,
    pub expected_shape: ExpectedShape,
    /// 1-based attempt number, bumped by the schema gate on repair.
    pub attempt: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repair_hint: Option<String>,
}

impl CompletionRequest {
    pub fn new(task_tag: TaskTag, context: PromptContext) -> Self {
        Self {
            task_tag,
            context,
            expected_shape: task_tag.expected_shape(),
            attempt: 1,
            repair_hint: None,
        }
    }

    pub fn check(&self) -> Result<(), ProviderError> {
        if self.expected_shape != self.task_tag.expected_shape() {
            return Err(ProviderError::InvalidRequest(format!(
                "{:?} expects {:?}, request declares {:?}",
                self.task_tag,
                self.task_tag.expected_shape(),
                self.expected_shape
            )));
        }
        let budget = self.task_tag.exemplar_budget();
        if self.context.exemplars.len() > budget {
            return Err(ProviderError::InvalidRequest(format!(
                "{:?} carries {} exemplars, at most {budget} allowed",
                self.task_tag,
                self.context.exemplars.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InspectionOutput {
    #[serde(default)]
    pub categories: Vec<FeedbackCategory>,
    #[serde(default)]
    pub feedback: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuideDraft {
    pub direction: GuideDirection,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CardLabelsOutput {
    pub topic: Vec<String>,
    pub action: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct GuideListOutput {
    guides: Vec<GuideDraft>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct TextOutput {
    text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct EmotionListOutput {
    emotions: Vec<String>,
}

/// A provider output that passed the schema gate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CompletionOutput {
    Inspection(InspectionOutput),
    Guides(Vec<GuideDraft>),
    Text(String),
    Cards(CardLabelsOutput),
    /// Raw emotion strings; curation discards anything outside the taxonomy.
    Emotions(Vec<String>),
}

/// Raw text generation backend. Implementations return the model's text
/// verbatim; parsing and validation happen in [`StructuredCompleter`].
pub trait CompletionProvider: Send + Sync {
    fn complete_raw(&self, request: &CompletionRequest) -> Result<String, ProviderError>;
}

/// Parses raw output for `request` and checks the request's constraints.
pub fn parse_output(request: &CompletionRequest, raw: &str) -> Result<CompletionOutput, String> {
    let raw = strip_code_fence(raw);
    let constraints = &request.context.constraints;
    match request.expected_shape {
        ExpectedShape::Inspection => {
            let out: InspectionOutput = serde_json::from_str(raw).map_err(|e| e.to_string())?;
            if !out.categories.is_empty()
                && out.feedback.as_deref().is_none_or(|f| f.trim().is_empty())
            {
                return Err("flagged categories require a feedback message".into());
            }
            Ok(CompletionOutput::Inspection(out))
        }
        ExpectedShape::GuideList => {
            let out: GuideListOutput = serde_json::from_str(raw).map_err(|e| e.to_string())?;
            if let Some(count) = constraints.count {
                if out.guides.len() != count {
                    return Err(format!("expected {count} guides, got {}", out.guides.len()));
                }
            }
            let mut seen = HashSet::new();
            for guide in &out.guides {
                if guide.text.trim().is_empty() {
                    return Err("guide text is empty".into());
                }
                if !seen.insert(guide.direction) {
                    return Err(format!("direction {:?} repeated", guide.direction));
                }
                if !constraints.allowed_directions.is_empty()
                    && !constraints.allowed_directions.contains(&guide.direction)
                {
                    return Err(format!("direction {:?} is not allowed", guide.direction));
                }
            }
            Ok(CompletionOutput::Guides(out.guides))
        }
        ExpectedShape::Text => {
            let out: TextOutput = serde_json::from_str(raw).map_err(|e| e.to_string())?;
            if out.text.trim().is_empty() {
                return Err("text is empty".into());
            }
            Ok(CompletionOutput::Text(out.text.trim().to_string()))
        }
        ExpectedShape::CardLabels => {
            let out: CardLabelsOutput = serde_json::from_str(raw).map_err(|e| e.to_string())?;
            let count = constraints.count.unwrap_or(4);
            let excluded: HashSet<String> = constraints
                .excluded_labels
                .iter()
                .map(|l| normalize_label(l))
                .collect();
            for (name, labels) in [("topic", &out.topic), ("action", &out.action)] {
                if labels.len() != count {
                    return Err(format!(
                        "expected {count} {name} labels, got {}",
                        labels.len()
                    ));
                }
                let mut seen = HashSet::new();
                for label in labels {
                    let key = normalize_label(label);
                    if key.is_empty() {
                        return Err(format!("empty {name} label"));
                    }
                    if excluded.contains(&key) {
                        return Err(format!("{name} label {label:?} was already shown"));
                    }
                    if !seen.insert(key) {
                        return Err(format!("{name} label {label:?} repeated"));
                    }
                }
            }
            Ok(CompletionOutput::Cards(out))
        }
        ExpectedShape::EmotionList => {
            let out: EmotionListOutput = serde_json::from_str(raw).map_err(|e| e.to_string())?;
            Ok(CompletionOutput::Emotions(out.emotions))
        }
    }
}

fn strip_code_fence(raw: &str) -> &str {
    let trimmed = raw.trim();
    let Some(rest) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    let rest = rest.strip_prefix("json").unwrap_or(rest);
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

/// Case- and whitespace-insensitive key used for label comparisons.
pub fn normalize_label(label: &str) -> String {
    label
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

pub const DEFAULT_REPAIR_RETRIES: u32 = 2;

/// Schema gate over a [`CompletionProvider`].
#[derive(Clone)]
pub struct StructuredCompleter {
    provider: Arc<dyn CompletionProvider>,
    repair_retries: u32,
}

impl StructuredCompleter {
    pub fn new(provider: Arc<dyn CompletionProvider>, repair_retries: u32) -> Self {
        Self {
            provider,
            repair_retries,
        }
    }

    /// Runs the request, re-asking with the validation error as a repair
    /// hint until the output validates or the retry budget is spent.
    pub fn complete(&self, request: CompletionRequest) -> Result<CompletionOutput, ProviderError> {
        request.check()?;
        let mut request = request;
        let attempts = self.repair_retries + 1;
        let mut last_error = String::new();
        for attempt in 1..=attempts {
            request.attempt = attempt;
            let raw = self.provider.complete_raw(&request)?;
            match parse_output(&request, &raw) {
                Ok(output) => return Ok(output),
                Err(reason) => {
                    last_error = reason.clone();
                    request.repair_hint = Some(reason);
                }
            }
        }
        Err(ProviderError::MalformedOutput {
            attempts,
            reason: last_error,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, ProviderError>;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        let values = self.embed_raw(text)?;
        if values.len() != self.dimension() {
            return Err(ProviderError::InvalidRequest(format!(
                "embedding has dimension {}, provider declares {}",
                values.len(),
                self.dimension()
            )));
        }
        Ok(EmbeddingVector::new(values))
    }
}

pub trait Transcriber: Send + Sync {
    fn transcribe_raw(&self, audio: &[u8], locale: &Locale) -> Result<String, ProviderError>;

    fn transcribe(&self, audio: &[u8], locale: &Locale) -> Result<String, ProviderError> {
        if audio.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        self.transcribe_raw(audio, locale)
    }
}

pub trait Synthesizer: Send + Sync {
    /// Returns the encoded audio for `text`.
    fn synthesize_raw(&self, text: &str, locale: &Locale) -> Result<Vec<u8>, ProviderError>;
}

/// Formal machine translation slot, used for guides and feedback.
pub trait Translator: Send + Sync {
    fn translate(&self, text: &str, locales: &LocalePair) -> Result<String, ProviderError>;
}

/// Destination for binary assets produced by providers (voice audio).
pub trait AssetSink: Send + Sync {
    fn put_asset(&self, asset_id: &str, bytes: &[u8]) -> std::io::Result<()>;
}

/// Stable id for the voice-over of `text` in `locale`.
pub fn voice_asset_id(text: &str, locale: &Locale) -> String {
    let mut hasher = Sha256::new();
    hasher.update(locale.as_str().as_bytes());
    hasher.update([0u8]);
    hasher.update(text.as_bytes());
    format!("voice-{}", &hex::encode(hasher.finalize())[..24])
}

/// Content-addressed, idempotent speech synthesis.
pub struct VoiceService {
    synthesizer: Arc<dyn Synthesizer>,
    assets: Option<Arc<dyn AssetSink>>,
    cache: Mutex<BTreeMap<(String, String), String>>,
}

impl VoiceService {
    pub fn new(synthesizer: Arc<dyn Synthesizer>, assets: Option<Arc<dyn AssetSink>>) -> Self {
        Self {
            synthesizer,
            assets,
            cache: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn synthesize(&self, text: &str, locale: &Locale) -> Result<String, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        let key = (text.to_string(), locale.0.clone());
        if let Some(id) = self.cache.lock().get(&key) {
            return Ok(id.clone());
        }
        let bytes = self.synthesizer.synthesize_raw(text, locale)?;
        let id = voice_asset_id(text, locale);
        if let Some(assets) = &self.assets {
            assets
                .put_asset(&id, &bytes)
                .map_err(|e| ProviderError::Unavailable(format!("storing voice asset: {e}")))?;
        }
        self.cache.lock().insert(key, id.clone());
        Ok(id)
    }
}

/// The full set of providers the pipelines run against.
#[derive(Clone)]
pub struct ProviderSet {
    pub completion: StructuredCompleter,
    pub embedder: Arc<dyn Embedder>,
    pub transcriber: Arc<dyn Transcriber>,
    pub translator: Arc<dyn Translator>,
    pub voice: Arc<VoiceService>,
}

impl ProviderSet {
    /// All-mock provider set; returns the mock handles for instrumentation.
    pub fn mock(seed: u64) -> (Self, mock::MockHandles) {
        Self::mock_with(mock::MockHandles::new(seed), DEFAULT_REPAIR_RETRIES, None)
    }

    pub fn mock_with(
        handles: mock::MockHandles,
        repair_retries: u32,
        assets: Option<Arc<dyn AssetSink>>,
    ) -> (Self, mock::MockHandles) {
        let set = Self {
            completion: StructuredCompleter::new(handles.completion.clone(), repair_retries),
            embedder: handles.embedder.clone(),
            transcriber: handles.transcriber.clone(),
            translator: handles.translator.clone(),
            voice: Arc::new(VoiceService::new(handles.synthesizer.clone(), assets)),
        };
        (set, handles)
    }

    pub fn live(
        config: &live::LiveConfig,
        repair_retries: u32,
        assets: Option<Arc<dyn AssetSink>>,
    ) -> Result<Self, ProviderError> {
        let client = live::LiveClient::new(config)?;
        Ok(Self {
            completion: StructuredCompleter::new(
                Arc::new(live::LiveCompletion::new(client.clone())),
                repair_retries,
            ),
            embedder: Arc::new(live::LiveEmbedder::new(client.clone())),
            transcriber: Arc::new(live::LiveTranscriber::new(client.clone())),
            translator: Arc::new(live::LiveTranslator::new(client.clone())),
            voice: Arc::new(VoiceService::new(
                Arc::new(live::LiveSynthesizer::new(client)),
                assets,
            )),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct Scripted {
        outputs: Vec<&'static str>,
        calls: AtomicU32,
    }

    impl CompletionProvider for Scripted {
        fn complete_raw(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst) as usize;
            assert_eq!(request.attempt as usize, n + 1);
            if n > 0 {
                assert!(request.repair_hint.is_some());
            }
            Ok(self.outputs[n.min(self.outputs.len() - 1)].to_string())
        }
    }

    fn guides_request(count: usize) -> CompletionRequest {
        let mut ctx = PromptContext::default();
        ctx.constraints.count = Some(count);
        ctx.constraints.allowed_directions = vec![
            GuideDirection::AskForElaboration,
            GuideDirection::ShowEmpathy,
        ];
        CompletionRequest::new(TaskTag::Guides, ctx)
    }

    #[test]
    fn repair_retry_recovers() {
        let provider = Arc::new(Scripted {
            outputs: vec![
                "not json",
                r#"```json
{"guides":[{"direction":"ShowEmpathy","text":"Tell them it is fine."}]}
```"#,
            ],
            calls: AtomicU32::new(0),
        });
        let gate = StructuredCompleter::new(provider.clone(), 2);
        let out = gate.complete(guides_request(1)).unwrap();
        assert_eq!(provider.calls.load(Ordering::SeqCst), 2);
        assert!(
            matches!(out, CompletionOutput::Guides(g) if g[0].direction == GuideDirection::ShowEmpathy)
        );
    }

    #[test]
    fn gives_up_after_budget() {
        let provider = Arc::new(Scripted {
            outputs: vec![r#"{"guides":[{"direction":"WrapUp","text":"Wrap up."}]}"#],
            calls: AtomicU32::new(0),
        });
        let gate = StructuredCompleter::new(provider.clone(), 2);
        let err = gate.complete(guides_request(1)).unwrap_err();
        assert!(matches!(
            err,
            ProviderError::MalformedOutput { attempts: 3, .. }
        ));
        assert_eq!(provider.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn card_labels_respect_exclusions() {
        let mut ctx = PromptContext::default();
        ctx.constraints.count = Some(1);
        ctx.constraints.excluded_labels = vec!["Bus".into()];
        let req = CompletionRequest::new(TaskTag::GenerateCards, ctx);
        assert!(parse_output(&req, r#"{"topic":["bus "],"action":["ride"]}"#).is_err());
        assert!(parse_output(&req, r#"{"topic":["train"],"action":["ride"]}"#).is_ok());
    }

    #[test]
    fn exemplar_budget_is_enforced() {
        let ctx = PromptContext {
            exemplars: (0..4)
                .map(|i| Exemplar {
                    entry_id: i.to_string(),
                    source: "a".into(),
                    target: "b".into(),
                })
                .collect(),
            ..PromptContext::default()
        };
        let req = CompletionRequest::new(TaskTag::TranslateExample, ctx.clone());
        assert!(req.check().is_err());
        let req = CompletionRequest::new(TaskTag::TranslateLabel, ctx);
        assert!(req.check().is_ok());
    }

    #[test]
    fn voice_ids_are_content_addressed() {
        let ko = Locale::new("ko");
        assert_eq!(
            voice_asset_id("firetruck", &ko),
            voice_asset_id("firetruck", &ko)
        );
        assert_ne!(
            voice_asset_id("firetruck", &ko),
            voice_asset_id("firetruck", &Locale::new("en"))
        );
    }
}
