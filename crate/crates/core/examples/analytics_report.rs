//! Runs a few mock sessions for two dyads and prints the usage report.
//!
//! cargo run -p dyadtalk --example analytics_report

use std::sync::Arc;

use dyadtalk::analytics::{build_report, render_summary, OverlapOptions};
use dyadtalk::cards::TranslationMemory;
use dyadtalk::domain::{
    CardCategory, ConversationTopic, DyadId, DyadProfile, LocalePair, ParentRole,
};
use dyadtalk::provider::ProviderSet;
use dyadtalk::session::{Engine, EngineConfig, PassSource, Services, SystemClock};
use dyadtalk::similarity::SimilarityStore;

fn main() {
    let (providers, _) = ProviderSet::mock(3);
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
    for (name, role) in [("yoon", ParentRole::Mother), ("jang", ParentRole::Father)] {
        let dyad = engine
            .upsert_dyad(DyadProfile {
                dyad_id: DyadId::new(name),
                parent_role: role,
                child_name: name.to_uppercase(),
                child_age: 8,
                child_characteristics: String::new(),
                interests: vec!["trains".into()],
                custom_images: Default::default(),
                locale_pair: LocalePair::new("en", "en"),
            })
            .unwrap();
        for (round, topic) in [
            ConversationTopic::recall(),
            ConversationTopic::interest("trains"),
        ]
        .into_iter()
        .enumerate()
        {
            let id = engine
                .start_session(&dyad.dyad_id, topic)
                .unwrap()
                .session_id;
            for turn in 0..round + 2 {
                engine
                    .submit_text(&id, "Which train did you like best?")
                    .unwrap();
                let deck = engine
                    .pass_turn(&id, None, PassSource::UiButton)
                    .unwrap()
                    .deck
                    .unwrap();
                let category = CardCategory::ALL[turn % 4];
                engine
                    .select_card(&id, &deck.category(category)[0].card_id)
                    .unwrap();
                engine.pass_turn(&id, None, PassSource::UiButton).unwrap();
            }
            engine.end_session(&id).unwrap();
        }
    }
    let report = build_report(
        &engine.sessions(),
        &engine.dyads(),
        None,
        &[],
        &OverlapOptions::default(),
    )
    .unwrap();
    print!("{}", render_summary(&report));
}
