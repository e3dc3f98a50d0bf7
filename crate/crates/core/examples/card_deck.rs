//! Builds a child-turn card deck, then refreshes it once.
//!
//! cargo run -p dyadtalk --example card_deck

use std::fs::File;
use std::path::Path;

use chrono::Utc;
use dyadtalk::cards::{build_deck, CardDeck, DeckRequest, DeckSettings, TranslationMemory};
use dyadtalk::domain::{
    CardCategory, ConversationTopic, DialogueMessage, DyadId, DyadProfile, ImageRef, LocalePair,
    ParentRole, SessionId,
};
use dyadtalk::provider::ProviderSet;
use dyadtalk::similarity::SimilarityStore;

fn print_deck(deck: &CardDeck) {
    println!("deck {} (refresh {})", deck.deck_id, deck.refresh_ordinal);
    for category in CardCategory::ALL {
        let cards: Vec<String> = deck
            .category(category)
            .iter()
            .map(|c| {
                let image = match &c.image_ref {
                    ImageRef::Symbol { symbol_id } => symbol_id.clone(),
                    ImageRef::Custom { asset_id } => format!("custom:{asset_id}"),
                    ImageRef::Placeholder => "-".into(),
                };
                format!("{} / {} [{image}]", c.label_canonical, c.label_localized)
            })
            .collect();
        println!("  {category:<8} {}", cards.join(", "));
    }
}

fn main() {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let (providers, _) = ProviderSet::mock(7);
    let pool = SimilarityStore::new(providers.embedder.clone());
    let memory = TranslationMemory::new();
    memory
        .load_records(
            File::open(data.join("translation-memory.jsonl")).unwrap(),
            Some(&pool),
        )
        .unwrap();
    pool.import_symbols(File::open(data.join("symbols.jsonl")).unwrap())
        .unwrap();

    let mut dyad = DyadProfile {
        dyad_id: DyadId::new("demo"),
        parent_role: ParentRole::Father,
        child_name: "Seo".into(),
        child_age: 8,
        child_characteristics: String::new(),
        interests: vec!["fire truck".into()],
        custom_images: Default::default(),
        locale_pair: LocalePair::new("en", "ko"),
    };
    dyad.custom_images
        .insert("Station".into(), "photo-station".into());
    let now = Utc::now();
    let history = vec![DialogueMessage::parent(
        0,
        "Did you see the fire truck at the station today?",
        now,
        now,
    )];
    let topic = ConversationTopic::interest("fire truck");
    let session_id = SessionId::new("demo-s1");
    let settings = DeckSettings::default();

    let mut decks: Vec<CardDeck> = Vec::new();
    for refresh in 0..2 {
        let request = DeckRequest {
            session_id: &session_id,
            turn_index: 1,
            refresh_ordinal: refresh,
            history: &history,
            dyad: &dyad,
            topic: &topic,
            previous_decks: &decks,
        };
        let deck = build_deck(&providers, &memory, &pool, &settings, &request);
        print_deck(&deck);
        decks.push(deck);
    }
}
