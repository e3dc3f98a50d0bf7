//! Inspects the parent's last message and prepares the next parent turn.
//!
//! cargo run -p dyadtalk --example guide_pipeline

use chrono::Utc;
use dyadtalk::domain::{
    exchange_count, CardCategory, CardIdentity, ConversationTopic, DialogueMessage, DyadId,
    DyadProfile, ImageRef, LocalePair, ParentRole,
};
use dyadtalk::guide::{inspect_previous_message, prepare_parent_turn};
use dyadtalk::provider::ProviderSet;

fn card(label: &str) -> CardIdentity {
    CardIdentity {
        card_id: label.to_lowercase(),
        category: CardCategory::Topic,
        label_canonical: label.into(),
        label_localized: label.into(),
        image_ref: ImageRef::Placeholder,
        voice_ref: None,
    }
}

fn main() {
    let (providers, _) = ProviderSet::mock(7);
    let dyad = DyadProfile {
        dyad_id: DyadId::new("demo"),
        parent_role: ParentRole::Mother,
        child_name: "Jiwoo".into(),
        child_age: 10,
        child_characteristics: "answers with one or two cards".into(),
        interests: vec!["drone".into()],
        custom_images: Default::default(),
        locale_pair: LocalePair::new("en", "ko"),
    };
    let topic = ConversationTopic::interest("drone");
    let now = Utc::now();
    let history = vec![
        DialogueMessage::parent(0, "What did you fly today?", now, now),
        DialogueMessage::child(1, vec![card("Drone"), card("Sky")], now, now),
        DialogueMessage::parent(
            2,
            "No... look carefully. That's wrong, try again.",
            now,
            now,
        ),
        DialogueMessage::child(3, vec![card("Balloon")], now, now),
    ];

    let inspection = inspect_previous_message(&providers.completion, &history);
    match &inspection {
        Some(found) => println!(
            "inspector flagged {:?}: {}",
            found.category, found.feedback_text
        ),
        None => println!("inspector found nothing to flag"),
    }

    let record = prepare_parent_turn(
        &providers.completion,
        providers.translator.as_ref(),
        &history,
        &dyad,
        &topic,
        history.len(),
        exchange_count(&history),
        inspection.as_ref(),
    );
    if let Some(feedback) = &record.feedback {
        println!(
            "feedback: {}\n          {}",
            feedback.text_canonical, feedback.text_localized
        );
    }
    for guide in &record.guides {
        println!(
            "[{}] {}\n          {}",
            guide.direction.name(),
            guide.guide_text_canonical,
            guide.guide_text_localized
        );
    }
}
