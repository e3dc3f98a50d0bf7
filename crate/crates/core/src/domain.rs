//! Shared vocabulary: dyad profiles, topics, messages, cards and the guide,
//! feedback and emotion taxonomies.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// Minimum supported child age in years.
pub const MIN_CHILD_AGE: u32 = 2;

macro_rules! string_id {
    ($name:ident) => {
        #[derive(
            Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(value: impl Into<String>) -> Self {
                Self(value.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(value: &str) -> Self {
                Self(value.to_string())
            }
        }
    };
}

string_id!(DyadId);
string_id!(SessionId);
string_id!(Locale);

impl Locale {
    /// Korean locales count syllables per Hangul block rather than per word.
    pub fn uses_syllable_blocks(&self) -> bool {
        let lower = self.0.to_ascii_lowercase();
        lower == "ko" || lower.starts_with("ko-") || lower.starts_with("ko_")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalePair {
    pub source: Locale,
    pub target: Locale,
}

impl LocalePair {
    pub fn new(source: impl Into<String>, target: impl Into<String>) -> Self {
        Self {
            source: Locale(source.into()),
            target: Locale(target.into()),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.source == self.target
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParentRole {
    Mother,
    Father,
}

impl ParentRole {
    /// How the child addresses this parent on the Core card.
    pub fn address(self) -> &'static str {
        match self {
            ParentRole::Mother => "mom",
            ParentRole::Father => "dad",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DyadProfile {
    pub dyad_id: DyadId,
    pub parent_role: ParentRole,
    pub child_name: String,
    pub child_age: u32,
    #[serde(default)]
    pub child_characteristics: String,
    #[serde(default)]
    pub interests: Vec<String>,
    /// Canonical (source-locale) card label to uploaded image asset id.
    #[serde(default)]
    pub custom_images: BTreeMap<String, String>,
    pub locale_pair: LocalePair,
}

impl DyadProfile {
    pub fn custom_image_for(&self, label: &str) -> Option<&str> {
        let needle = label.trim();
        self.custom_images
            .get(needle)
            .or_else(|| {
                self.custom_images
                    .iter()
                    .find(|(k, _)| k.trim().eq_ignore_ascii_case(needle))
                    .map(|(_, v)| v)
            })
            .map(String::as_str)
    }

    /// One-paragraph description handed to generation prompts.
    pub fn summary(&self) -> String {
        let interests = if self.interests.is_empty() {
            "none recorded".to_string()
        } else {
            self.interests.join(", ")
        };
        format!(
            "Parent: {} ({}). Child: {}, age {}. Characteristics: {}. Interests: {}.",
            match self.parent_role {
                ParentRole::Mother => "mother",
                ParentRole::Father => "father",
            },
            self.parent_role.address(),
            self.child_name,
            self.child_age,
            if self.child_characteristics.trim().is_empty() {
                "not described"
            } else {
                self.child_characteristics.trim()
            },
            interests
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum ProfileViolation {
    EmptyDyadId,
    /// Ids are limited to ASCII letters, digits, `-`, `_` and `.`.
    InvalidDyadId,
    EmptyChildName,
    ChildTooYoung {
        age: u32,
    },
    EmptyInterest {
        index: usize,
    },
    DuplicateInterest {
        label: String,
    },
    EmptyCustomImageKey,
    EmptyCustomImageAsset {
        label: String,
    },
    EmptyLocale,
}

impl fmt::Display for ProfileViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProfileViolation::EmptyDyadId => write!(f, "dyad_id must not be empty"),
            ProfileViolation::InvalidDyadId => {
                write!(
                    f,
                    "dyad_id may only contain ASCII letters, digits, '-', '_' and '.'"
                )
            }
            ProfileViolation::EmptyChildName => write!(f, "child_name must not be empty"),
            ProfileViolation::ChildTooYoung { age } => {
                write!(f, "child_age {age} is below the minimum of {MIN_CHILD_AGE}")
            }
            ProfileViolation::EmptyInterest { index } => {
                write!(f, "interest at position {index} is empty")
            }
            ProfileViolation::DuplicateInterest { label } => {
                write!(f, "duplicate interest {label:?}")
            }
            ProfileViolation::EmptyCustomImageKey => {
                write!(f, "custom image registered under an empty label")
            }
            ProfileViolation::EmptyCustomImageAsset { label } => {
                write!(f, "custom image for {label:?} has an empty asset id")
            }
            ProfileViolation::EmptyLocale => write!(f, "locale identifiers must not be empty"),
        }
    }
}

/// Whether `id` can double as a file name.
pub fn is_safe_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

/// Checks every profile invariant and reports all violations found.
pub fn validate_profile(profile: &DyadProfile) -> Vec<ProfileViolation> {
    let mut violations = Vec::new();
    if profile.dyad_id.0.trim().is_empty() {
        violations.push(ProfileViolation::EmptyDyadId);
    } else if !is_safe_id(&profile.dyad_id.0) {
        violations.push(ProfileViolation::InvalidDyadId);
    }
    if profile.child_name.trim().is_empty() {
        violations.push(ProfileViolation::EmptyChildName);
    }
    if profile.child_age < MIN_CHILD_AGE {
        violations.push(ProfileViolation::ChildTooYoung {
            age: profile.child_age,
        });
    }
    let mut seen = HashSet::new();
    for (index, interest) in profile.interests.iter().enumerate() {
        let trimmed = interest.trim();
        if trimmed.is_empty() {
            violations.push(ProfileViolation::EmptyInterest { index });
        } else if !seen.insert(trimmed.to_lowercase()) {
            violations.push(ProfileViolation::DuplicateInterest {
                label: trimmed.to_string(),
            });
        }
    }
    for (label, asset) in &profile.custom_images {
        if label.trim().is_empty() {
            violations.push(ProfileViolation::EmptyCustomImageKey);
        } else if asset.trim().is_empty() {
            violations.push(ProfileViolation::EmptyCustomImageAsset {
                label: label.clone(),
            });
        }
    }
    if profile.locale_pair.source.0.trim().is_empty()
        || profile.locale_pair.target.0.trim().is_empty()
    {
        violations.push(ProfileViolation::EmptyLocale);
    }
    violations
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TopicKind {
    /// Sharing the day's schedule.
    Plan,
    /// Talking over something that already happened.
    Recall,
    /// One of the child's registered interests.
    Interest,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConversationTopic {
    pub kind: TopicKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interest_label: Option<String>,
}

impl ConversationTopic {
    pub fn plan() -> Self {
        Self {
            kind: TopicKind::Plan,
            interest_label: None,
        }
    }

    pub fn recall() -> Self {
        Self {
            kind: TopicKind::Recall,
            interest_label: None,
        }
    }

    pub fn interest(label: impl Into<String>) -> Self {
        Self {
            kind: TopicKind::Interest,
            interest_label: Some(label.into()),
        }
    }

    /// Whether this topic can be started for `profile`.
    pub fn is_valid_for(&self, profile: &DyadProfile) -> bool {
        match (self.kind, &self.interest_label) {
            (TopicKind::Interest, Some(label)) => profile
                .interests
                .iter()
                .any(|i| i.trim().eq_ignore_ascii_case(label.trim())),
            (TopicKind::Interest, None) => false,
            (_, Some(_)) => false,
            (_, None) => true,
        }
    }

    pub fn describe(&self) -> String {
        match (self.kind, &self.interest_label) {
            (TopicKind::Plan, _) => "plans for the day".to_string(),
            (TopicKind::Recall, _) => "what happened today".to_string(),
            (TopicKind::Interest, Some(label)) => format!("the child's interest: {label}"),
            (TopicKind::Interest, None) => "the child's interest".to_string(),
        }
    }
}

impl fmt::Display for ConversationTopic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.kind, &self.interest_label) {
            (TopicKind::Interest, Some(label)) => write!(f, "Interest({label})"),
            (kind, _) => write!(f, "{kind:?}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GuideDirection {
    AskForElaboration,
    ShowEncouragement,
    SuggestChoices,
    EncourageSelfDisclosure,
    AskForIntentions,
    ExtendTopic,
    OpenUp,
    ShowEmpathy,
    PiqueInterest,
    ProvideClues,
    SuggestCopingStrategies,
    WrapUp,
}

impl GuideDirection {
    pub const ALL: [GuideDirection; 12] = [
        GuideDirection::AskForElaboration,
        GuideDirection::ShowEncouragement,
        GuideDirection::SuggestChoices,
        GuideDirection::EncourageSelfDisclosure,
        GuideDirection::AskForIntentions,
        GuideDirection::ExtendTopic,
        GuideDirection::OpenUp,
        GuideDirection::ShowEmpathy,
        GuideDirection::PiqueInterest,
        GuideDirection::ProvideClues,
        GuideDirection::SuggestCopingStrategies,
        GuideDirection::WrapUp,
    ];

    /// Exchanges that must be completed before the parent is offered a
    /// guide to close the conversation.
    pub const WRAP_UP_MIN_EXCHANGES: usize = 3;

    pub fn name(self) -> &'static str {
        match self {
            GuideDirection::AskForElaboration => "Ask for elaboration",
            GuideDirection::ShowEncouragement => "Show encouragement",
            GuideDirection::SuggestChoices => "Suggest choices",
            GuideDirection::EncourageSelfDisclosure => "Encourage self-disclosure",
            GuideDirection::AskForIntentions => "Ask for intentions",
            GuideDirection::ExtendTopic => "Extend topic",
            GuideDirection::OpenUp => "Open up",
            GuideDirection::ShowEmpathy => "Show empathy",
            GuideDirection::PiqueInterest => "Pique interest",
            GuideDirection::ProvideClues => "Provide clues",
            GuideDirection::SuggestCopingStrategies => "Suggest coping strategies",
            GuideDirection::WrapUp => "Wrap up",
        }
    }

    /// Short definition used when prompting a generator.
    pub fn definition(self) -> &'static str {
        match self {
            GuideDirection::AskForElaboration => {
                "ask a \"what\" question so the child can specify the event"
            }
            GuideDirection::ShowEncouragement => "cheer on the child's actions or feelings",
            GuideDirection::SuggestChoices => "offer a few options the child can pick an answer from",
            GuideDirection::EncourageSelfDisclosure => "ask how the child feels",
            GuideDirection::AskForIntentions => {
                "check what the child meant by the last response and ask back"
            }
            GuideDirection::ExtendTopic => "widen or shift the topic of the conversation",
            GuideDirection::OpenUp => "share the parent's own feelings and thoughts in plain words",
            GuideDirection::ShowEmpathy => "acknowledge and share the child's feelings",
            GuideDirection::PiqueInterest => {
                "spark curiosity by bringing up something surprising or contrary to what the child knows"
            }
            GuideDirection::ProvideClues => {
                "give hints the child can answer from things they already know"
            }
            GuideDirection::SuggestCopingStrategies => {
                "propose a way for the child to handle a specific situation"
            }
            GuideDirection::WrapUp => "ask whether the child would like to finish the conversation",
        }
    }

    pub fn parse(value: &str) -> Option<Self> {
        let key: String = value
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Self::ALL.into_iter().find(|d| {
            format!("{d:?}").to_ascii_lowercase() == key
                || d.name()
                    .chars()
                    .filter(|c| c.is_ascii_alphanumeric())
                    .collect::<String>()
                    .to_ascii_lowercase()
                    == key
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeedbackCategory {
    Blame,
    Correction,
    Complex,
}

impl FeedbackCategory {
    pub const ALL: [FeedbackCategory; 3] = [
        FeedbackCategory::Blame,
        FeedbackCategory::Correction,
        FeedbackCategory::Complex,
    ];

    /// Lower ranks first when one message matches several categories.
    pub fn priority_rank(self) -> u8 {
        match self {
            FeedbackCategory::Blame => 0,
            FeedbackCategory::Correction => 1,
            FeedbackCategory::Complex => 2,
        }
    }

    pub fn definition(self) -> &'static str {
        match self {
            FeedbackCategory::Blame => {
                "the parent criticizes, scolds or negatively evaluates the child's response"
            }
            FeedbackCategory::Correction => {
                "the parent keeps correcting the child's response or points out that the child is wrong"
            }
            FeedbackCategory::Complex => "the message carries more than one goal or intent",
        }
    }

    /// Picks the highest-priority category out of a set of matches.
    pub fn most_pressing(matches: &[FeedbackCategory]) -> Option<FeedbackCategory> {
        matches.iter().copied().min_by_key(|c| c.priority_rank())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Joyful,
    Glad,
    Happy,
    Excited,
    Sad,
    Angry,
    Upset,
    Scared,
    Afraid,
    Surprised,
    Amazed,
    Bored,
}

impl EmotionLabel {
    pub const ALL: [EmotionLabel; 12] = [
        EmotionLabel::Joyful,
        EmotionLabel::Glad,
        EmotionLabel::Happy,
        EmotionLabel::Excited,
        EmotionLabel::Sad,
        EmotionLabel::Angry,
        EmotionLabel::Upset,
        EmotionLabel::Scared,
        EmotionLabel::Afraid,
        EmotionLabel::Surprised,
        EmotionLabel::Amazed,
        EmotionLabel::Bored,
    ];

    /// Backfill order used whenever curation output is short or unusable.
    pub const PRIORITY: [EmotionLabel; 12] = [
        EmotionLabel::Happy,
        EmotionLabel::Sad,
        EmotionLabel::Scared,
        EmotionLabel::Excited,
        EmotionLabel::Angry,
        EmotionLabel::Joyful,
        EmotionLabel::Glad,
        EmotionLabel::Upset,
        EmotionLabel::Afraid,
        EmotionLabel::Surprised,
        EmotionLabel::Amazed,
        EmotionLabel::Bored,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EmotionLabel::Joyful => "joyful",
            EmotionLabel::Glad => "glad",
            EmotionLabel::Happy => "happy",
            EmotionLabel::Excited => "excited",
            EmotionLabel::Sad => "sad",
            EmotionLabel::Angry => "angry",
            EmotionLabel::Upset => "upset",
            EmotionLabel::Scared => "scared",
            EmotionLabel::Afraid => "afraid",
            EmotionLabel::Surprised => "surprised",
            EmotionLabel::Amazed => "amazed",
            EmotionLabel::Bored => "bored",
        }
    }

    pub fn parse(value: &str) -> Option<Self> {
        let value = value.trim();
        Self::ALL
            .into_iter()
            .find(|e| e.as_str().eq_ignore_ascii_case(value))
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CardCategory {
    Topic,
    Action,
    Emotion,
    Core,
}

impl CardCategory {
    pub const ALL: [CardCategory; 4] = [
        CardCategory::Topic,
        CardCategory::Action,
        CardCategory::Emotion,
        CardCategory::Core,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CardCategory::Topic => "Topic",
            CardCategory::Action => "Action",
            CardCategory::Emotion => "Emotion",
            CardCategory::Core => "Core",
        }
    }

    pub fn parse(value: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(value.trim()))
    }
}

impl fmt::Display for CardCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImageRef {
    Symbol { symbol_id: String },
    Custom { asset_id: String },
    Placeholder,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CardIdentity {
    pub card_id: String,
    pub category: CardCategory,
    pub label_canonical: String,
    pub label_localized: String,
    pub image_ref: ImageRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voice_ref: Option<String>,
}

pub const CORE_YES: &str = "Yes";
pub const CORE_NO: &str = "No";
pub const CORE_DONT_KNOW: &str = "I don't know";

pub fn core_ask_back_label(role: ParentRole) -> String {
    format!("How about you, {}?", role.address())
}

/// The four Core cards, always present on every deck.
pub fn core_card_set(role: ParentRole) -> Vec<CardIdentity> {
    [
        CORE_YES.to_string(),
        CORE_NO.to_string(),
        CORE_DONT_KNOW.to_string(),
        core_ask_back_label(role),
    ]
    .into_iter()
    .enumerate()
    .map(|(i, label)| CardIdentity {
        card_id: format!("core-{i}"),
        category: CardCategory::Core,
        label_localized: label.clone(),
        label_canonical: label,
        image_ref: ImageRef::Placeholder,
        voice_ref: None,
    })
    .collect()
}

/// Position of `label` in the Core set for either parent role.
pub fn core_slot(label: &str) -> Option<usize> {
    match label {
        CORE_YES => Some(0),
        CORE_NO => Some(1),
        CORE_DONT_KNOW => Some(2),
        l if l == core_ask_back_label(ParentRole::Mother)
            || l == core_ask_back_label(ParentRole::Father) =>
        {
            Some(3)
        }
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Speaker {
    Parent,
    Child,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueMessage {
    pub speaker: Speaker,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub child_cards: Option<Vec<CardIdentity>>,
    pub turn_index: usize,
    pub started_at: DateTime<Utc>,
    pub ended_at: DateTime<Utc>,
}

impl DialogueMessage {
    pub fn parent(
        turn_index: usize,
        text: impl Into<String>,
        started_at: DateTime<Utc>,
        ended_at: DateTime<Utc>,
    ) -> Self {
        Self {
            speaker: Speaker::Parent,
            parent_text: Some(text.into()),
            child_cards: None,
            turn_index,
            started_at,
            ended_at,
        }
    }

    pub fn child(
        turn_index: usize,
        cards: Vec<CardIdentity>,
        started_at: DateTime<Utc>,
        ended_at: DateTime<Utc>,
    ) -> Self {
        Self {
            speaker: Speaker::Child,
            parent_text: None,
            child_cards: Some(cards),
            turn_index,
            started_at,
            ended_at,
        }
    }

    /// Text rendering used in prompts and transcripts.
    pub fn render(&self) -> String {
        match self.speaker {
            Speaker::Parent => self.parent_text.clone().unwrap_or_default(),
            Speaker::Child => self
                .child_cards
                .as_deref()
                .unwrap_or_default()
                .iter()
                .map(|c| format!("[{}]", c.label_canonical))
                .collect::<String>(),
        }
    }

    pub fn is_well_formed(&self) -> bool {
        match self.speaker {
            Speaker::Parent => self.parent_text.is_some() && self.child_cards.is_none(),
            Speaker::Child => self.parent_text.is_none() && self.child_cards.is_some(),
        }
    }
}

/// Number of completed parent-then-child pairs at the start of `history`.
/// A trailing unanswered parent message counts for nothing, and counting
/// stops at the first break in alternation.
pub fn exchange_count(history: &[DialogueMessage]) -> usize {
    let mut pairs = 0;
    let mut chunks = history.chunks_exact(2);
    for pair in &mut chunks {
        if pair[0].speaker == Speaker::Parent && pair[1].speaker == Speaker::Child {
            pairs += 1;
        } else {
            break;
        }
    }
    pairs
}

/// Checks the alternation and numbering invariants of a message history.
pub fn check_history(history: &[DialogueMessage]) -> Result<(), String> {
    for (i, message) in history.iter().enumerate() {
        let expected = if i % 2 == 0 {
            Speaker::Parent
        } else {
            Speaker::Child
        };
        if message.speaker != expected {
            return Err(format!(
                "message {i} spoken by {:?}, expected {expected:?}",
                message.speaker
            ));
        }
        if message.turn_index != i {
            return Err(format!(
                "message {i} carries turn_index {}",
                message.turn_index
            ));
        }
        if !message.is_well_formed() {
            return Err(format!("message {i} mixes parent text and child cards"));
        }
    }
    Ok(())
}
