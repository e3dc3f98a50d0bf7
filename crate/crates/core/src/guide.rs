//! Parent-turn guidance: inspect the previous parent message, generate
//! direction-tagged guides, generate examples on reveal, and localize both
//! through separate translation paths (formal for guides and feedback,
//! few-shot informal for examples).

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::domain::{
    ConversationTopic, DialogueMessage, DyadProfile, FeedbackCategory, GuideDirection, LocalePair,
    Speaker,
};
use crate::provider::{
    CompletionOutput, CompletionRequest, Constraints, Exemplar, GuideDraft, PromptContext,
    PromptLine, StructuredCompleter, TaskTag, Translator,
};
use crate::similarity::{SimilarityError, SimilarityStore, EXAMPLE_TRANSLATIONS};

pub const GUIDES_WITHOUT_FEEDBACK: usize = 3;
pub const GUIDES_WITH_FEEDBACK: usize = 2;
pub const EXAMPLE_EXEMPLARS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParentGuide {
    pub guide_id: String,
    pub direction: GuideDirection,
    pub guide_text_canonical: String,
    pub guide_text_localized: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub guide_untranslated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example_canonical: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example_localized: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub example_untranslated: bool,
    pub revealed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reveal_time: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackMessage {
    pub category: FeedbackCategory,
    pub text_canonical: String,
    pub text_localized: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub untranslated: bool,
    /// Turn index of the parent message that triggered this feedback.
    pub triggering_turn_index: usize,
}

/// Everything shown on one parent turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuideTurnRecord {
    pub turn_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<FeedbackMessage>,
    pub guides: Vec<ParentGuide>,
}

impl GuideTurnRecord {
    pub fn guidance_items(&self) -> usize {
        self.guides.len() + usize::from(self.feedback.is_some())
    }
}

/// Result of inspecting a parent message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inspection {
    pub category: FeedbackCategory,
    pub feedback_text: String,
    pub triggering_turn_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalizedText {
    pub text: String,
    pub untranslated: bool,
}

impl LocalizedText {
    fn identity(text: &str) -> Self {
        Self {
            text: text.to_string(),
            untranslated: false,
        }
    }

    fn fallback(text: &str) -> Self {
        Self {
            text: text.to_string(),
            untranslated: true,
        }
    }
}

fn last_parent_message(history: &[DialogueMessage]) -> Option<&DialogueMessage> {
    history.iter().rev().find(|m| m.speaker == Speaker::Parent)
}

fn fallback_feedback(category: FeedbackCategory) -> String {
    match category {
        FeedbackCategory::Blame => {
            "Negative remarks can make the child feel judged; a supportive reply helps them keep talking."
        }
        FeedbackCategory::Correction => {
            "Frequent corrections can discourage the child; let them answer in their own way."
        }
        FeedbackCategory::Complex => {
            "Several goals in one message are hard to follow; try one topic at a time."
        }
    }
    .to_string()
}

/// Checks the most recent parent message against the feedback categories.
/// Provider failures yield `None`: guidance is advisory and never blocks a
/// turn.
pub fn inspect_previous_message(
    completer: &StructuredCompleter,
    history: &[DialogueMessage],
) -> Option<Inspection> {
    let message = last_parent_message(history)?;
    let text = message.parent_text.as_deref().unwrap_or_default();
    if text.trim().is_empty() {
        return None;
    }
    let context = PromptContext {
        dialogue: PromptLine::from_history(history),
        input: Some(text.to_string()),
        ..Default::default()
    };
    let output = completer
        .complete(CompletionRequest::new(TaskTag::Inspect, context))
        .ok()?;
    let CompletionOutput::Inspection(found) = output else {
        return None;
    };
    let category = FeedbackCategory::most_pressing(&found.categories)?;
    let feedback_text = found
        .feedback
        .filter(|f| !f.trim().is_empty())
        .unwrap_or_else(|| fallback_feedback(category));
    Some(Inspection {
        category,
        feedback_text,
        triggering_turn_index: message.turn_index,
    })
}

pub fn guide_count(feedback_present: bool) -> usize {
    if feedback_present {
        GUIDES_WITH_FEEDBACK
    } else {
        GUIDES_WITHOUT_FEEDBACK
    }
}

/// Directions a generator may pick from after `exchanges` completed pairs.
pub fn allowed_directions(exchanges: usize) -> Vec<GuideDirection> {
    GuideDirection::ALL
        .into_iter()
        .filter(|d| {
            *d != GuideDirection::WrapUp || exchanges >= GuideDirection::WRAP_UP_MIN_EXCHANGES
        })
        .collect()
}

/// Guide set used when generation fails outright.
pub fn fallback_guides(child_name: &str, count: usize) -> Vec<GuideDraft> {
    [
        (
            GuideDirection::AskForElaboration,
            format!("Ask {child_name} what they would like to tell you about it."),
        ),
        (
            GuideDirection::ShowEncouragement,
            format!("Tell {child_name} you are glad to be talking together."),
        ),
        (
            GuideDirection::SuggestChoices,
            format!("Offer {child_name} two simple choices to pick from."),
        ),
    ]
    .into_iter()
    .take(count)
    .map(|(direction, text)| GuideDraft { direction, text })
    .collect()
}

/// Produces exactly 2 guides when feedback is shown, otherwise 3, with
/// pairwise distinct directions and no wrap-up before enough exchanges.
pub fn generate_guides(
    completer: &StructuredCompleter,
    history: &[DialogueMessage],
    dyad: &DyadProfile,
    topic: &ConversationTopic,
    feedback_present: bool,
    exchanges: usize,
) -> Vec<GuideDraft> {
    let count = guide_count(feedback_present);
    let allowed = allowed_directions(exchanges);
    let context = PromptContext {
        dyad_summary: Some(dyad.summary()),
        child_name: Some(dyad.child_name.clone()),
        topic: Some(topic.describe()),
        dialogue: PromptLine::from_history(history),
        constraints: Constraints {
            count: Some(count),
            allowed_directions: allowed,
            ..Default::default()
        },
        ..Default::default()
    };
    match completer.complete(CompletionRequest::new(TaskTag::Guides, context)) {
        Ok(CompletionOutput::Guides(guides)) => guides,
        _ => fallback_guides(&dyad.child_name, count),
    }
}

/// One utterance the parent could say for `guide`, or `None` when the
/// generator fails.
pub fn generate_example(
    completer: &StructuredCompleter,
    guide: &ParentGuide,
    history: &[DialogueMessage],
    dyad: &DyadProfile,
) -> Option<String> {
    let context = PromptContext {
        dyad_summary: Some(dyad.summary()),
        child_name: Some(dyad.child_name.clone()),
        dialogue: PromptLine::from_history(history),
        input: Some(guide.guide_text_canonical.clone()),
        constraints: Constraints {
            direction: Some(guide.direction),
            ..Default::default()
        },
        ..Default::default()
    };
    match completer.complete(CompletionRequest::new(TaskTag::Example, context)) {
        Ok(CompletionOutput::Text(text)) => Some(text),
        _ => None,
    }
}

/// Formal translation path.
pub fn localize_guide(
    translator: &dyn Translator,
    text: &str,
    locales: &LocalePair,
) -> LocalizedText {
    if locales.is_identity() || text.trim().is_empty() {
        return LocalizedText::identity(text);
    }
    match translator.translate(text, locales) {
        Ok(translated) if !translated.trim().is_empty() => LocalizedText {
            text: translated,
            untranslated: false,
        },
        _ => LocalizedText::fallback(text),
    }
}

/// Up to three nearest reference translations for `text`.
pub fn example_exemplars(
    store: &SimilarityStore,
    text: &str,
) -> Result<Vec<Exemplar>, SimilarityError> {
    let hits = match store.top_k(EXAMPLE_TRANSLATIONS, text, EXAMPLE_EXEMPLARS) {
        Ok(hits) => hits,
        Err(SimilarityError::UnknownCollection(_)) => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    Ok(hits
        .into_iter()
        .map(|hit| Exemplar {
            target: hit.entry.payload["target"]
                .as_str()
                .unwrap_or_default()
                .to_string(),
            entry_id: hit.entry.entry_id,
            source: hit.entry.key_text,
        })
        .collect())
}

/// Informal few-shot translation path.
pub fn localize_example(
    completer: &StructuredCompleter,
    store: &SimilarityStore,
    text: &str,
    locales: &LocalePair,
) -> LocalizedText {
    if locales.is_identity() || text.trim().is_empty() {
        return LocalizedText::identity(text);
    }
    let Ok(exemplars) = example_exemplars(store, text) else {
        return LocalizedText::fallback(text);
    };
    let context = PromptContext {
        input: Some(text.to_string()),
        exemplars,
        constraints: Constraints {
            locales: Some(locales.clone()),
            ..Default::default()
        },
        ..Default::default()
    };
    match completer.complete(CompletionRequest::new(TaskTag::TranslateExample, context)) {
        Ok(CompletionOutput::Text(translated)) => LocalizedText {
            text: translated,
            untranslated: false,
        },
        _ => LocalizedText::fallback(text),
    }
}

/// Adds a reference pair to the example translation pool.
pub fn add_example_reference(
    store: &SimilarityStore,
    source: &str,
    target: &str,
) -> Result<String, SimilarityError> {
    store.add_entry(EXAMPLE_TRANSLATIONS, source, json!({ "target": target }))
}

/// Builds the complete record for a parent turn: localized feedback (if the
/// previous parent message was flagged) plus localized guides.
#[allow(clippy::too_many_arguments)]
pub fn prepare_parent_turn(
    completer: &StructuredCompleter,
    translator: &dyn Translator,
    history: &[DialogueMessage],
    dyad: &DyadProfile,
    topic: &ConversationTopic,
    turn_index: usize,
    exchanges: usize,
    inspection: Option<&Inspection>,
) -> GuideTurnRecord {
    let locales = &dyad.locale_pair;
    let feedback = inspection.map(|found| {
        let localized = localize_guide(translator, &found.feedback_text, locales);
        FeedbackMessage {
            category: found.category,
            text_canonical: found.feedback_text.clone(),
            text_localized: localized.text,
            untranslated: localized.untranslated,
            triggering_turn_index: found.triggering_turn_index,
        }
    });
    let drafts = generate_guides(
        completer,
        history,
        dyad,
        topic,
        feedback.is_some(),
        exchanges,
    );
    let guides = drafts
        .into_iter()
        .enumerate()
        .map(|(i, draft)| {
            let localized = localize_guide(translator, &draft.text, locales);
            ParentGuide {
                guide_id: format!("t{turn_index}-g{i}"),
                direction: draft.direction,
                guide_text_canonical: draft.text,
                guide_text_localized: localized.text,
                guide_untranslated: localized.untranslated,
                example_canonical: None,
                example_localized: None,
                example_untranslated: false,
                revealed: false,
                reveal_time: None,
            }
        })
        .collect();
    GuideTurnRecord {
        turn_index,
        feedback,
        guides,
    }
}

/// Example fields filled in when a guide is revealed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevealedExample {
    #[serde(default)]
    pub example_canonical: Option<String>,
    #[serde(default)]
    pub example_localized: Option<String>,
    #[serde(default)]
    pub untranslated: bool,
}

pub fn reveal_example(
    completer: &StructuredCompleter,
    store: &SimilarityStore,
    guide: &ParentGuide,
    history: &[DialogueMessage],
    dyad: &DyadProfile,
) -> RevealedExample {
    match generate_example(completer, guide, history, dyad) {
        Some(example) => {
            let localized = localize_example(completer, store, &example, &dyad.locale_pair);
            RevealedExample {
                example_canonical: Some(example),
                example_localized: Some(localized.text),
                untranslated: localized.untranslated,
            }
        }
        None => RevealedExample {
            example_canonical: None,
            example_localized: None,
            untranslated: false,
        },
    }
}
