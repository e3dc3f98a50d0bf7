//! Persists a session as an event log, reads it back and rebuilds the
//! session from the events alone.
//!
//! cargo run -p dyadtalk --example replay

use std::sync::Arc;

use dyadtalk::cards::TranslationMemory;
use dyadtalk::domain::{ConversationTopic, DyadId, DyadProfile, LocalePair, ParentRole};
use dyadtalk::provider::ProviderSet;
use dyadtalk::session::{replay, Engine, EngineConfig, PassSource, Services, SystemClock};
use dyadtalk::similarity::SimilarityStore;
use dyadtalk::store::FileStore;

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(FileStore::open(dir.path()).unwrap());
    let (providers, _) = ProviderSet::mock(11);
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
        Some(store.clone()),
    );
    engine
        .upsert_dyad(DyadProfile {
            dyad_id: DyadId::new("choi"),
            parent_role: ParentRole::Father,
            child_name: "Yuna".into(),
            child_age: 7,
            child_characteristics: String::new(),
            interests: vec!["music".into()],
            custom_images: Default::default(),
            locale_pair: LocalePair::new("en", "ko"),
        })
        .unwrap();
    let id = engine
        .start_session(&DyadId::new("choi"), ConversationTopic::plan())
        .unwrap()
        .session_id;
    engine
        .submit_text(&id, "Shall we sing a song after dinner?")
        .unwrap();
    let deck = engine
        .pass_turn(&id, None, PassSource::UiButton)
        .unwrap()
        .deck
        .unwrap();
    engine
        .select_card(&id, &deck.all_cards().next().unwrap().card_id)
        .unwrap();
    engine.refresh_deck(&id).unwrap();
    engine.pass_turn(&id, None, PassSource::UiButton).unwrap();
    let live = engine.end_session(&id).unwrap();

    let events = store.read_events(&id).unwrap();
    for event in &events {
        let line = serde_json::to_string(event).unwrap();
        println!("{}", &line[..line.len().min(110)]);
    }
    let rebuilt = replay(&events).unwrap();
    println!(
        "\n{} events replayed; identical to the live session: {}",
        events.len(),
        rebuilt.to_json() == live.to_json()
    );
}
