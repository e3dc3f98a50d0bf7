//! Deterministic offline providers.
//!
//! Every mock is a pure function of its input plus a fixed seed. The text
//! generator extracts tokens from the dialogue and pads with fixed filler
//! vocabularies, so callers can assert counts and uniqueness without caring
//! about semantics. Calls are recorded for instrumentation.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::Deserialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{
    normalize_label, CompletionProvider, CompletionRequest, Embedder, ProviderError, Synthesizer,
    TaskTag, Transcriber, Translator,
};
use crate::domain::{EmotionLabel, FeedbackCategory, GuideDirection, Locale, LocalePair};

pub const TRIGRAM_BUCKETS: usize = 256;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME)
    })
}

fn mix(seed: u64, parts: &[&[u8]]) -> u64 {
    let mut h = fnv1a(&seed.to_le_bytes());
    for part in parts {
        h ^= fnv1a(part);
        h = h.wrapping_mul(FNV_PRIME).rotate_left(17);
    }
    h
}

/// Lowercased, whitespace-collapsed text padded with one space per side.
pub fn trigram_text(text: &str) -> Vec<char> {
    let collapsed = text
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    let mut chars = vec![' '];
    chars.extend(collapsed.chars());
    chars.push(' ');
    chars
}

/// L2-normalised histogram of hashed character trigrams.
#[derive(Debug, Default)]
pub struct TrigramEmbedder {
    available: AtomicBool,
}

impl TrigramEmbedder {
    pub fn new() -> Self {
        Self {
            available: AtomicBool::new(true),
        }
    }

    pub fn set_available(&self, up: bool) {
        self.available.store(up, Ordering::SeqCst);
    }
}

impl Embedder for TrigramEmbedder {
    fn dimension(&self) -> usize {
        TRIGRAM_BUCKETS
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        if !self.available.load(Ordering::SeqCst) {
            return Err(ProviderError::Unavailable("mock embedder is down".into()));
        }
        let chars = trigram_text(text);
        let mut buckets = vec![0.0f64; TRIGRAM_BUCKETS];
        let mut buf = [0u8; 12];
        for window in chars.windows(3) {
            let mut len = 0;
            for c in window {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            buckets[(fnv1a(&buf[..len]) % TRIGRAM_BUCKETS as u64) as usize] += 1.0;
        }
        let norm = buckets.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut buckets {
                *v /= norm;
            }
        }
        Ok(buckets)
    }
}

/// Scheduled misbehaviour for the mock text generator.
#[derive(Debug, Clone, Default)]
pub struct FaultPlan {
    /// Tasks that always answer with unparsable output.
    pub malformed_tasks: HashSet<TaskTag>,
    /// Tasks that fail at the transport level.
    pub unavailable_tasks: HashSet<TaskTag>,
    /// Per-mille chance that a first attempt is malformed (seeded, so the
    /// repair retry is exercised reproducibly).
    pub first_attempt_malformed_permille: u32,
    /// Fixed emotion list returned for curation requests.
    pub emotion_override: Option<Vec<String>>,
    /// Answer as if the request carried no constraints: any guide direction,
    /// no label exclusions, too many emotions. Exercises the output gate.
    pub ignore_constraints: bool,
}

const STOPWORDS: &[&str] = &[
    "about", "after", "again", "all", "also", "and", "any", "are", "been", "but", "can", "could",
    "dad", "did", "does", "doing", "don't", "done", "for", "from", "gonna", "had", "has", "have",
    "her", "here", "him", "his", "how", "it's", "its", "just", "know", "let", "let's", "lets",
    "like", "look", "mom", "more", "next", "not", "now", "okay", "one", "our", "out", "really",
    "right", "shall", "she", "should", "some", "that", "the", "their", "them", "then", "there",
    "they", "this", "time", "today", "too", "very", "wanna", "want", "was", "we're", "were",
    "what", "when", "where", "which", "who", "why", "will", "with", "would", "yes", "you",
    "you're", "your", "feel", "take", "into", "tell", "remember", "think", "hmm", "isn't",
];

const ACTION_WORDS: &[&str] = &[
    "go", "eat", "play", "ride", "draw", "see", "watch", "read", "sing", "dance", "run", "jump",
    "swim", "sleep", "drink", "cook", "build", "paint", "climb", "throw", "catch", "fly", "wash",
    "open", "close", "help", "hug", "walk", "visit", "make", "cheer", "study", "brush", "bake",
    "fix", "kick", "push", "pull", "drive", "flew", "played", "saw", "ate", "went", "rode", "drew",
    "sang", "swam", "slept", "made", "visited", "watched",
];

pub const TOPIC_FILLER: &[&str] = &[
    "Park",
    "School",
    "Friend",
    "Snack",
    "Toy",
    "Book",
    "Ball",
    "Car",
    "Dog",
    "Cat",
    "Music",
    "Bath",
    "Bed",
    "Lunch",
    "Dinner",
    "Teacher",
    "Grandma",
    "Playground",
    "Picture",
    "Water",
    "Sun",
    "Rain",
    "Bus",
    "Train",
    "Cake",
    "Apple",
    "Shoes",
    "Hat",
    "Blanket",
    "Puzzle",
    "Block",
    "Robot",
    "Doll",
    "Bubble",
    "Flower",
    "Tree",
    "Bird",
    "Fish",
    "Moon",
    "Star",
    "Home",
    "Store",
];

pub const ACTION_FILLER: &[&str] = &[
    "Play", "Eat", "Go", "Read", "Draw", "Sing", "Dance", "Run", "Jump", "Sleep", "Drink", "Watch",
    "Ride", "Build", "Swim", "Hug", "Wash", "Walk", "Help", "Look", "Cook", "Paint", "Climb",
    "Throw", "Catch", "Open", "Clap", "Rest", "Share", "Clean",
];

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Lowercase word tokens of `text` (letters and apostrophes).
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphabetic() || c == '\''))
        .map(|t| t.trim_matches('\'').to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Splits dialogue tokens into (topic, action) candidates, newest line first.
pub fn candidate_tokens(lines: &[String]) -> (Vec<String>, Vec<String>) {
    let mut topic = Vec::new();
    let mut action = Vec::new();
    let mut seen = HashSet::new();
    for line in lines.iter().rev() {
        for token in word_tokens(line) {
            if !seen.insert(token.clone()) {
                continue;
            }
            if ACTION_WORDS.contains(&token.as_str()) {
                action.push(capitalize(&token));
            } else if token.chars().count() >= 3 && !STOPWORDS.contains(&token.as_str()) {
                topic.push(capitalize(&token));
            }
        }
    }
    (topic, action)
}

fn feedback_text(category: FeedbackCategory) -> &'static str {
    match category {
        FeedbackCategory::Blame => {
            "Critical remarks can leave the child feeling judged and less willing to answer. \
             Responding with understanding helps them feel supported."
        }
        FeedbackCategory::Correction => {
            "Correcting answers again and again can discourage the child from trying. \
             Letting them express themselves their own way keeps them engaged."
        }
        FeedbackCategory::Complex => {
            "Several goals in one message can be hard to follow. \
             Focusing on one topic at a time makes it easier for the child to respond."
        }
    }
}

const BLAME_MARKERS: &[&str] = &[
    "no...",
    "look carefully",
    "take a closer look",
    "bad",
    "stop it",
    "why can't you",
    "what's wrong with you",
    "pay attention",
    "you never",
    "silly",
];
const CORRECTION_MARKERS: &[&str] = &[
    "do that again",
    "next time",
    "that's wrong",
    "wrong",
    "not right",
    "say it again",
    "try again",
    "you should pick",
    "the right answer",
    "not that one",
];

/// Keyword rules behind the mock inspector.
pub fn inspect_rules(message: &str) -> Vec<FeedbackCategory> {
    let lower = message.to_lowercase();
    let mut found = Vec::new();
    if BLAME_MARKERS.iter().any(|m| lower.contains(m)) {
        found.push(FeedbackCategory::Blame);
    }
    if CORRECTION_MARKERS.iter().any(|m| lower.contains(m)) {
        found.push(FeedbackCategory::Correction);
    }
    if lower.matches('?').count() >= 2 {
        found.push(FeedbackCategory::Complex);
    }
    found
}

pub fn guide_template(direction: GuideDirection, name: &str, subject: &str) -> String {
    match direction {
        GuideDirection::AskForElaboration => {
            format!("Ask {name} what happened with the {subject}.")
        }
        GuideDirection::ShowEncouragement => {
            format!("Cheer {name} on for telling you about the {subject}.")
        }
        GuideDirection::SuggestChoices => {
            format!("Offer {name} two choices about the {subject} and let them pick one.")
        }
        GuideDirection::EncourageSelfDisclosure => {
            format!("Ask {name} how they feel about the {subject}.")
        }
        GuideDirection::AskForIntentions => {
            format!("Check what {name} meant with the last cards and ask back.")
        }
        GuideDirection::ExtendTopic => {
            format!("Connect the {subject} to something else {name} enjoys.")
        }
        GuideDirection::OpenUp => {
            format!("Tell {name} how you feel about the {subject} in simple words.")
        }
        GuideDirection::ShowEmpathy => {
            format!("Let {name} know that their feelings about the {subject} are okay.")
        }
        GuideDirection::PiqueInterest => {
            format!("Tell {name} something surprising about the {subject}.")
        }
        GuideDirection::ProvideClues => {
            format!("Give {name} a hint about the {subject} from something you did together.")
        }
        GuideDirection::SuggestCopingStrategies => {
            format!("Suggest a way {name} could handle the {subject} next time.")
        }
        GuideDirection::WrapUp => {
            format!("Ask {name} whether they want to finish talking for now.")
        }
    }
}

/// Reshapes a guide into something the parent could say to the child.
pub fn example_from_guide(name: &str, guide: &str) -> String {
    let body = guide.trim().trim_end_matches(['.', '!', '?']);
    let mut chars = body.chars();
    let body: String = match chars.next() {
        Some(first) => first.to_lowercase().chain(chars).collect(),
        None => String::new(),
    };
    format!("{name}, {body}?")
}

pub fn mock_label_translation(label: &str, target: &Locale) -> String {
    format!("{label}@{target}")
}

pub fn mock_informal_translation(text: &str, target: &Locale) -> String {
    format!("{text} ~{target}/informal")
}

pub fn mock_formal_translation(text: &str, target: &Locale) -> String {
    format!("[{target}] {text}")
}

/// Mock text generator with call recording and fault injection.
pub struct MockCompletion {
    seed: u64,
    available: AtomicBool,
    faults: Mutex<FaultPlan>,
    calls: Mutex<Vec<CompletionRequest>>,
}

impl MockCompletion {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            available: AtomicBool::new(true),
            faults: Mutex::new(FaultPlan::default()),
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn set_available(&self, up: bool) {
        self.available.store(up, Ordering::SeqCst);
    }

    pub fn set_faults(&self, plan: FaultPlan) {
        *self.faults.lock() = plan;
    }

    pub fn calls(&self) -> Vec<CompletionRequest> {
        self.calls.lock().clone()
    }

    pub fn call_count(&self, task: TaskTag) -> usize {
        self.calls
            .lock()
            .iter()
            .filter(|r| r.task_tag == task)
            .count()
    }

    pub fn clear_calls(&self) {
        self.calls.lock().clear();
    }

    fn respond(&self, request: &CompletionRequest) -> serde_json::Value {
        let ctx = &request.context;
        let name = ctx.child_name.as_deref().unwrap_or("your child");
        let lines: Vec<String> = ctx.dialogue.iter().map(|l| l.text.clone()).collect();
        match request.task_tag {
            TaskTag::Inspect => {
                let message = ctx.input.as_deref().unwrap_or_default();
                let categories = inspect_rules(message);
                let feedback = FeedbackCategory::most_pressing(&categories).map(feedback_text);
                json!({ "categories": categories, "feedback": feedback })
            }
            TaskTag::Guides => {
                let count = ctx.constraints.count.unwrap_or(3);
                let fingerprint = lines.join("\n");
                let mut allowed = ctx.constraints.allowed_directions.clone();
                if allowed.is_empty() || self.faults.lock().ignore_constraints {
                    allowed = GuideDirection::ALL.to_vec();
                }
                allowed.sort_by_key(|d| mix(self.seed, &[fingerprint.as_bytes(), &[*d as u8]]));
                let subject = candidate_tokens(&lines)
                    .0
                    .first()
                    .map(|s| s.to_lowercase())
                    .or_else(|| ctx.topic.clone())
                    .unwrap_or_else(|| "day".to_string());
                let guides: Vec<_> = allowed
                    .into_iter()
                    .take(count)
                    .map(|d| json!({ "direction": d, "text": guide_template(d, name, &subject) }))
                    .collect();
                json!({ "guides": guides })
            }
            TaskTag::Example => {
                let guide = ctx.input.as_deref().unwrap_or_default();
                json!({ "text": example_from_guide(name, guide) })
            }
            TaskTag::TranslateExample => {
                let target = target_locale(ctx.constraints.locales.as_ref());
                json!({ "text": mock_informal_translation(ctx.input.as_deref().unwrap_or_default(), &target) })
            }
            TaskTag::TranslateLabel => {
                let target = target_locale(ctx.constraints.locales.as_ref());
                let label = ctx
                    .label
                    .as_deref()
                    .or(ctx.input.as_deref())
                    .unwrap_or_default();
                json!({ "text": mock_label_translation(label, &target) })
            }
            TaskTag::Caption => {
                let label = ctx.label.as_deref().unwrap_or("symbol");
                let description = ctx.input.as_deref().unwrap_or_default().to_lowercase();
                json!({ "text": format!("{}: {}", label.to_lowercase(), description) })
            }
            TaskTag::GenerateCards => {
                let count = ctx.constraints.count.unwrap_or(4);
                let mut taken: HashSet<String> = if self.faults.lock().ignore_constraints {
                    HashSet::new()
                } else {
                    ctx.constraints
                        .excluded_labels
                        .iter()
                        .map(|l| normalize_label(l))
                        .collect()
                };
                let (topic_tokens, action_tokens) = candidate_tokens(&lines);
                let topic = pick_labels(topic_tokens, TOPIC_FILLER, self.seed, count, &mut taken);
                let action = pick_labels(
                    action_tokens,
                    ACTION_FILLER,
                    self.seed ^ 0x5eed,
                    count,
                    &mut taken,
                );
                json!({ "topic": topic, "action": action })
            }
            TaskTag::CurateEmotions => {
                if let Some(list) = &self.faults.lock().emotion_override {
                    return json!({ "emotions": list });
                }
                if self.faults.lock().ignore_constraints {
                    let mut all: Vec<&str> = EmotionLabel::PRIORITY
                        .into_iter()
                        .map(EmotionLabel::as_str)
                        .collect();
                    all.push("confused");
                    return json!({ "emotions": all });
                }
                let excluded = &ctx.constraints.excluded_emotions;
                let emotions: Vec<&str> = EmotionLabel::PRIORITY
                    .into_iter()
                    .filter(|e| !excluded.contains(e))
                    .take(ctx.constraints.count.unwrap_or(4))
                    .map(EmotionLabel::as_str)
                    .collect();
                json!({ "emotions": emotions })
            }
        }
    }
}

fn target_locale(locales: Option<&LocalePair>) -> Locale {
    locales
        .map(|p| p.target.clone())
        .unwrap_or_else(|| Locale::new("xx"))
}

fn pick_labels(
    tokens: Vec<String>,
    filler: &[&str],
    seed: u64,
    count: usize,
    taken: &mut HashSet<String>,
) -> Vec<String> {
    let offset = (mix(seed, &[b"filler"]) % filler.len() as u64) as usize;
    let rotated = filler[offset..]
        .iter()
        .chain(&filler[..offset])
        .map(|s| s.to_string());
    let mut out = Vec::new();
    for label in tokens.into_iter().chain(rotated) {
        if out.len() == count {
            break;
        }
        if taken.insert(normalize_label(&label)) {
            out.push(label);
        }
    }
    out
}

impl CompletionProvider for MockCompletion {
    fn complete_raw(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        self.calls.lock().push(request.clone());
        if !self.available.load(Ordering::SeqCst) {
            return Err(ProviderError::Unavailable("mock completion is down".into()));
        }
        {
            let faults = self.faults.lock();
            if faults.unavailable_tasks.contains(&request.task_tag) {
                return Err(ProviderError::Unavailable(format!(
                    "{:?} is down",
                    request.task_tag
                )));
            }
            if faults.malformed_tasks.contains(&request.task_tag) {
                return Ok("{\"unexpected\": ".to_string());
            }
            if request.attempt == 1 && faults.first_attempt_malformed_permille > 0 {
                let fingerprint = serde_json::to_string(&request.context).unwrap_or_default();
                let roll = mix(
                    self.seed,
                    &[fingerprint.as_bytes(), &[request.task_tag as u8]],
                ) % 1000;
                if roll < u64::from(faults.first_attempt_malformed_permille) {
                    return Ok("Sure! Here is what you asked for.".to_string());
                }
            }
        }
        Ok(self.respond(request).to_string())
    }
}

/// Formal translation mock: prefixes a locale tag.
#[derive(Debug)]
pub struct MockTranslator {
    available: AtomicBool,
    calls: Mutex<usize>,
}

impl Default for MockTranslator {
    fn default() -> Self {
        Self {
            available: AtomicBool::new(true),
            calls: Mutex::new(0),
        }
    }
}

impl MockTranslator {
    pub fn set_available(&self, up: bool) {
        self.available.store(up, Ordering::SeqCst);
    }

    pub fn call_count(&self) -> usize {
        *self.calls.lock()
    }
}

impl Translator for MockTranslator {
    fn translate(&self, text: &str, locales: &LocalePair) -> Result<String, ProviderError> {
        *self.calls.lock() += 1;
        if !self.available.load(Ordering::SeqCst) {
            return Err(ProviderError::Unavailable("mock translator is down".into()));
        }
        Ok(mock_formal_translation(text, &locales.target))
    }
}

/// Returns transcripts registered for exact audio payloads (sidecar files).
#[derive(Debug)]
pub struct MockTranscriber {
    available: AtomicBool,
    transcripts: Mutex<HashMap<String, String>>,
}

impl Default for MockTranscriber {
    fn default() -> Self {
        Self {
            available: AtomicBool::new(true),
            transcripts: Mutex::new(HashMap::new()),
        }
    }
}

#[derive(Deserialize)]
struct Sidecar {
    transcript: String,
}

fn audio_key(audio: &[u8]) -> String {
    hex::encode(Sha256::digest(audio))
}

impl MockTranscriber {
    pub fn set_available(&self, up: bool) {
        self.available.store(up, Ordering::SeqCst);
    }

    pub fn register(&self, audio: &[u8], transcript: impl Into<String>) {
        self.transcripts
            .lock()
            .insert(audio_key(audio), transcript.into());
    }

    /// Registers every `<file>` that has a `<file>.json` sidecar of the form
    /// `{"transcript": "..."}`. Returns the number of fixtures loaded.
    pub fn load_fixture_dir(&self, dir: &Path) -> std::io::Result<usize> {
        let mut loaded = 0;
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                continue;
            }
            let mut sidecar = path.clone().into_os_string();
            sidecar.push(".json");
            let sidecar = Path::new(&sidecar);
            if !sidecar.exists() {
                continue;
            }
            let meta: Sidecar = serde_json::from_slice(&std::fs::read(sidecar)?)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            self.register(&std::fs::read(&path)?, meta.transcript);
            loaded += 1;
        }
        Ok(loaded)
    }
}

impl Transcriber for MockTranscriber {
    fn transcribe_raw(&self, audio: &[u8], _locale: &Locale) -> Result<String, ProviderError> {
        if !self.available.load(Ordering::SeqCst) {
            return Err(ProviderError::Unavailable(
                "mock transcriber is down".into(),
            ));
        }
        self.transcripts
            .lock()
            .get(&audio_key(audio))
            .cloned()
            .ok_or(ProviderError::UnrecognizedAudio)
    }
}

/// Produces empty audio payloads; the asset id is derived from the input.
#[derive(Debug)]
pub struct MockSynthesizer {
    available: AtomicBool,
    calls: Mutex<usize>,
}

impl Default for MockSynthesizer {
    fn default() -> Self {
        Self {
            available: AtomicBool::new(true),
            calls: Mutex::new(0),
        }
    }
}

impl MockSynthesizer {
    pub fn set_available(&self, up: bool) {
        self.available.store(up, Ordering::SeqCst);
    }

    pub fn call_count(&self) -> usize {
        *self.calls.lock()
    }
}

impl Synthesizer for MockSynthesizer {
    fn synthesize_raw(&self, _text: &str, _locale: &Locale) -> Result<Vec<u8>, ProviderError> {
        *self.calls.lock() += 1;
        if !self.available.load(Ordering::SeqCst) {
            return Err(ProviderError::Unavailable(
                "mock synthesizer is down".into(),
            ));
        }
        Ok(Vec::new())
    }
}

/// Shared handles to every mock, for wiring and test instrumentation.
#[derive(Clone)]
pub struct MockHandles {
    pub completion: Arc<MockCompletion>,
    pub embedder: Arc<TrigramEmbedder>,
    pub transcriber: Arc<MockTranscriber>,
    pub translator: Arc<MockTranslator>,
    pub synthesizer: Arc<MockSynthesizer>,
}

impl MockHandles {
    pub fn new(seed: u64) -> Self {
        Self {
            completion: Arc::new(MockCompletion::new(seed)),
            embedder: Arc::new(TrigramEmbedder::new()),
            transcriber: Arc::new(MockTranscriber::default()),
            translator: Arc::new(MockTranslator::default()),
            synthesizer: Arc::new(MockSynthesizer::default()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{
        CompletionOutput, Constraints, PromptContext, PromptLine, StructuredCompleter,
    };

    fn dialogue(lines: &[&str]) -> Vec<PromptLine> {
        lines
            .iter()
            .map(|t| PromptLine {
                speaker: "Parent".into(),
                text: t.to_string(),
            })
            .collect()
    }

    fn run(mock: Arc<MockCompletion>, task: TaskTag, ctx: PromptContext) -> CompletionOutput {
        StructuredCompleter::new(mock, 2)
            .complete(CompletionRequest::new(task, ctx))
            .unwrap()
    }

    #[test]
    fn card_generation_is_deterministic_and_counted() {
        let ctx = PromptContext {
            dialogue: dialogue(&["did you see the firefighter and the bus at the job trip"]),
            constraints: Constraints {
                count: Some(4),
                ..Default::default()
            },
            ..Default::default()
        };
        let a = run(
            Arc::new(MockCompletion::new(7)),
            TaskTag::GenerateCards,
            ctx.clone(),
        );
        let b = run(
            Arc::new(MockCompletion::new(7)),
            TaskTag::GenerateCards,
            ctx,
        );
        assert_eq!(a, b);
        let CompletionOutput::Cards(cards) = a else {
            panic!("wrong shape")
        };
        assert_eq!(cards.topic.len(), 4);
        assert_eq!(cards.action.len(), 4);
        assert_eq!(cards.topic[0], "Firefighter");
        assert!(cards.topic.contains(&"Bus".to_string()));
        assert!(cards.action.contains(&"See".to_string()));
        let tokens: HashSet<String> =
            word_tokens("did you see the firefighter and the bus at the job trip")
                .into_iter()
                .map(|t| capitalize(&t))
                .collect();
        for label in cards.topic.iter() {
            assert!(tokens.contains(label) || TOPIC_FILLER.contains(&label.as_str()));
        }
    }

    #[test]
    fn emotion_curation_skips_exclusions() {
        let ctx = PromptContext {
            constraints: Constraints {
                count: Some(4),
                excluded_emotions: vec![EmotionLabel::Happy, EmotionLabel::Scared],
                ..Default::default()
            },
            ..Default::default()
        };
        let out = run(
            Arc::new(MockCompletion::new(1)),
            TaskTag::CurateEmotions,
            ctx,
        );
        assert_eq!(
            out,
            CompletionOutput::Emotions(vec![
                "sad".into(),
                "excited".into(),
                "angry".into(),
                "joyful".into()
            ])
        );
    }

    #[test]
    fn inspector_rules_match_reference_messages() {
        assert_eq!(
            inspect_rules(
                "Hmm, no... take a closer look. This isn't light blue. Look carefully and answer."
            ),
            vec![FeedbackCategory::Blame]
        );
        assert_eq!(
            inspect_rules("It's Saturday! We're going to draw, visit the zoo, and have ice cream. Do you know what we should talk about today? Should we start with the zoo?"),
            vec![FeedbackCategory::Complex]
        );
        assert_eq!(
            inspect_rules(
                "Let's do that again. We had chicken for dinner. Next time, pick chicken."
            ),
            vec![FeedbackCategory::Correction]
        );
        assert!(inspect_rules("What did you eat for lunch?").is_empty());
    }

    #[test]
    fn trigram_embedding_is_normalised_and_deterministic() {
        let e = TrigramEmbedder::new();
        let a = e.embed("fire truck").unwrap();
        let b = e.embed("fire truck").unwrap();
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-12);
        assert_eq!(a.dimension(), TRIGRAM_BUCKETS);
        assert_eq!(e.embed("   "), Err(ProviderError::EmptyInput));
    }

    #[test]
    fn transcriber_uses_registered_sidecars() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("q1.wav"), b"RIFF-fake-1").unwrap();
        std::fs::write(
            dir.path().join("q1.wav.json"),
            r#"{"transcript":"what did you do today"}"#,
        )
        .unwrap();
        std::fs::write(dir.path().join("orphan.wav"), b"RIFF-fake-2").unwrap();
        let t = MockTranscriber::default();
        assert_eq!(t.load_fixture_dir(dir.path()).unwrap(), 1);
        let ko = Locale::new("ko");
        assert_eq!(
            t.transcribe(b"RIFF-fake-1", &ko).unwrap(),
            "what did you do today"
        );
        assert_eq!(t.transcribe(b"", &ko), Err(ProviderError::EmptyInput));
        assert_eq!(
            t.transcribe(b"RIFF-fake-2", &ko),
            Err(ProviderError::UnrecognizedAudio)
        );
        t.set_available(false);
        assert!(matches!(
            t.transcribe(b"RIFF-fake-1", &ko),
            Err(ProviderError::Unavailable(_))
        ));
    }

    #[test]
    fn first_attempt_faults_are_repaired() {
        let mock = Arc::new(MockCompletion::new(3));
        mock.set_faults(FaultPlan {
            first_attempt_malformed_permille: 1000,
            ..Default::default()
        });
        let ctx = PromptContext {
            input: Some("Ask Emma how she feels when playing soccer.".into()),
            child_name: Some("Emma".into()),
            ..Default::default()
        };
        let out = run(mock.clone(), TaskTag::Example, ctx);
        assert_eq!(mock.call_count(TaskTag::Example), 2);
        assert_eq!(
            out,
            CompletionOutput::Text("Emma, ask Emma how she feels when playing soccer?".into())
        );
    }
}
