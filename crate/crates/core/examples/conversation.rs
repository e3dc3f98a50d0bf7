//! Drives a short conversation through the session engine and prints the
//! day's transcript.
//!
//! cargo run -p dyadtalk --example conversation

use std::sync::Arc;

use dyadtalk::analytics::export_daily_transcript;
use dyadtalk::cards::TranslationMemory;
use dyadtalk::domain::{
    CardCategory, ConversationTopic, DyadId, DyadProfile, LocalePair, ParentRole,
};
use dyadtalk::provider::ProviderSet;
use dyadtalk::session::{Engine, EngineConfig, PassSource, Services, SystemClock};
use dyadtalk::similarity::SimilarityStore;

fn main() {
    let (providers, _) = ProviderSet::mock(7);
    let services = Services {
        pool: Arc::new(SimilarityStore::new(providers.embedder.clone())),
        providers,
        memory: Arc::new(TranslationMemory::new()),
        assets: None,
    };
    let engine = Engine::new(
        services,
        EngineConfig::default(),
        Arc::new(SystemClock),
        None,
    );
    let dyad = engine
        .upsert_dyad(DyadProfile {
            dyad_id: DyadId::new("park"),
            parent_role: ParentRole::Mother,
            child_name: "Hana".into(),
            child_age: 9,
            child_characteristics: "likes vehicles".into(),
            interests: vec!["bus".into()],
            custom_images: Default::default(),
            locale_pair: LocalePair::new("en", "en"),
        })
        .unwrap();

    let session = engine
        .start_session(&dyad.dyad_id, ConversationTopic::interest("bus"))
        .unwrap();
    let id = session.session_id.clone();
    let lines = [
        "Did you ride the bus to school today?",
        "What did you see from the window?",
        "How did you feel on the bus?",
    ];
    for (i, line) in lines.iter().enumerate() {
        let guides = engine
            .session(&id)
            .unwrap()
            .current_guides()
            .unwrap()
            .clone();
        println!(
            "guides: {}",
            guides
                .guides
                .iter()
                .map(|g| g.direction.name())
                .collect::<Vec<_>>()
                .join(", ")
        );
        engine.submit_text(&id, line).unwrap();
        let deck = engine
            .pass_turn(&id, None, PassSource::HardwareButton)
            .unwrap()
            .deck
            .unwrap();
        let pick = [
            CardCategory::Topic,
            CardCategory::Action,
            CardCategory::Emotion,
        ][i];
        engine
            .select_card(&id, &deck.category(pick)[0].card_id)
            .unwrap();
        engine
            .select_card(&id, &deck.category(CardCategory::Core)[0].card_id)
            .unwrap();
        engine
            .pass_turn(&id, None, PassSource::HardwareButton)
            .unwrap();
    }
    let ended = engine.end_session(&id).unwrap();
    println!("stars: {}\n", ended.stars.unwrap_or(0));
    print!(
        "{}",
        export_daily_transcript(
            &engine.sessions(),
            &dyad.dyad_id,
            ended.started_at.date_naive()
        )
    );
}
