//! Prompt rendering for live text generation.
//!
//! These prompts are reconstructions built from the guide and feedback
//! taxonomies; they are approximations, not tuned production prompts.

use super::{CompletionRequest, TaskTag};
use crate::domain::{FeedbackCategory, GuideDirection};

pub fn system_prompt(task: TaskTag) -> String {
    let body = match task {
        TaskTag::Inspect => {
            let mut s = String::from(
                "You review the most recent message a parent said to a minimally verbal autistic child. \
                 Decide which of these patterns it shows, if any:\n",
            );
            for c in FeedbackCategory::ALL {
                s.push_str(&format!("- {c:?}: {}\n", c.definition()));
            }
            s.push_str(
                "If any apply, write one short feedback message for the parent that explains the likely \
                 impact on the child and what tends to help, without forbidding anything. \
                 Answer as JSON: {\"categories\": [..], \"feedback\": string|null}.",
            );
            s
        }
        TaskTag::Guides => {
            let mut s = String::from(
                "You coach a parent talking with a minimally verbal autistic child who answers with AAC cards. \
                 Write guides for the parent's next message. Each guide is one imperative sentence addressed \
                 to the parent and uses exactly one direction from this list:\n",
            );
            for d in GuideDirection::ALL {
                s.push_str(&format!("- {d:?}: {}\n", d.definition()));
            }
            s.push_str(
                "Use only the allowed directions given in the constraints, never repeat a direction, and \
                 return exactly the requested count. Answer as JSON: \
                 {\"guides\": [{\"direction\": Direction, \"text\": string}]}.",
            );
            s
        }
        TaskTag::Example => "Turn the guide into one sentence the parent could say to the child verbatim. \
             Address the child by name. Answer as JSON: {\"text\": string}."
            .to_string(),
        TaskTag::TranslateExample => "Translate the parent's sentence into the target language using a warm, \
             informal register typical of a parent talking to a young child. Follow the style of the \
             reference translations. Answer as JSON: {\"text\": string}."
            .to_string(),
        TaskTag::TranslateLabel => "Translate the AAC card label into the target language as a short, \
             child-friendly word or phrase. Follow the reference translations. Answer as JSON: \
             {\"text\": string}."
            .to_string(),
        TaskTag::GenerateCards => "Suggest AAC card labels a minimally verbal child could use to answer the \
             parent's last message: short Topic labels (things, people, places) and short Action labels \
             (verbs). Never reuse an excluded label and never repeat a label. Answer as JSON: \
             {\"topic\": [string], \"action\": [string]} with the requested count in each list."
            .to_string(),
        TaskTag::CurateEmotions => "Pick the emotions that best fit what the child might want to express \
             next, choosing only from: joyful, glad, happy, excited, sad, angry, upset, scared, afraid, \
             surprised, amazed, bored. Skip excluded emotions. Answer as JSON: {\"emotions\": [string]}."
            .to_string(),
        TaskTag::Caption => "Write a short caption describing the AAC symbol image so it can be matched \
             against card labels. Answer as JSON: {\"text\": string}."
            .to_string(),
    };
    body
}

pub fn user_prompt(request: &CompletionRequest) -> String {
    let ctx = &request.context;
    let mut out = String::new();
    if let Some(summary) = &ctx.dyad_summary {
        out.push_str(&format!("Dyad: {summary}\n"));
    }
    if let Some(topic) = &ctx.topic {
        out.push_str(&format!("Conversation topic: {topic}\n"));
    }
    if !ctx.dialogue.is_empty() {
        out.push_str("Dialogue so far:\n");
        for line in &ctx.dialogue {
            out.push_str(&format!("{}: {}\n", line.speaker, line.text));
        }
    }
    let c = &ctx.constraints;
    if let Some(count) = c.count {
        out.push_str(&format!("Count: {count}\n"));
    }
    if !c.allowed_directions.is_empty() {
        let names: Vec<String> = c
            .allowed_directions
            .iter()
            .map(|d| format!("{d:?}"))
            .collect();
        out.push_str(&format!("Allowed directions: {}\n", names.join(", ")));
    }
    if !c.excluded_labels.is_empty() {
        out.push_str(&format!(
            "Excluded labels: {}\n",
            c.excluded_labels.join(", ")
        ));
    }
    if !c.excluded_emotions.is_empty() {
        let names: Vec<&str> = c.excluded_emotions.iter().map(|e| e.as_str()).collect();
        out.push_str(&format!("Excluded emotions: {}\n", names.join(", ")));
    }
    if let Some(category) = c.category {
        out.push_str(&format!("Card category: {category}\n"));
    }
    if let Some(direction) = c.direction {
        out.push_str(&format!("Guide direction: {direction:?}\n"));
    }
    if let Some(locales) = &c.locales {
        out.push_str(&format!(
            "Source language: {}\nTarget language: {}\n",
            locales.source, locales.target
        ));
    }
    if !ctx.exemplars.is_empty() {
        out.push_str("Reference translations:\n");
        for ex in &ctx.exemplars {
            out.push_str(&format!("- {} => {}\n", ex.source, ex.target));
        }
    }
    if let Some(label) = &ctx.label {
        out.push_str(&format!("Label: {label}\n"));
    }
    if let Some(input) = &ctx.input {
        out.push_str(&format!("Input: {input}\n"));
    }
    if let Some(hint) = &request.repair_hint {
        out.push_str(&format!(
            "Your previous answer was rejected: {hint}. Answer again with valid JSON only.\n"
        ));
    }
    out
}
