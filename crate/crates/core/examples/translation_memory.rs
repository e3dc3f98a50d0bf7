//! Localizes card labels through the translation memory: seeded labels are
//! served from memory, a new label is translated once and then remembered.
//!
//! cargo run -p dyadtalk --example translation_memory

use std::fs::File;
use std::path::Path;

use dyadtalk::cards::{localize_label, TranslationMemory};
use dyadtalk::domain::{CardCategory, LocalePair};
use dyadtalk::provider::{ProviderSet, TaskTag};
use dyadtalk::similarity::SimilarityStore;

fn main() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/translation-memory.jsonl");
    let (providers, handles) = ProviderSet::mock(7);
    let pool = SimilarityStore::new(providers.embedder.clone());
    let memory = TranslationMemory::new();
    let seeded = memory
        .load_records(File::open(path).unwrap(), Some(&pool))
        .unwrap();
    println!("seeded {seeded} labels");

    let locales = LocalePair::new("en", "ko");
    let labels = [
        (CardCategory::Topic, "Bus"),
        (CardCategory::Action, "Ride"),
        (CardCategory::Topic, "Zeppelin"),
        (CardCategory::Topic, "Zeppelin"),
    ];
    for (category, label) in labels {
        let before = handles.completion.call_count(TaskTag::TranslateLabel);
        let out = localize_label(
            &providers.completion,
            &memory,
            &pool,
            category,
            label,
            &locales,
        );
        let called = handles.completion.call_count(TaskTag::TranslateLabel) - before;
        println!(
            "{category:<7} {label:<10} -> {:<12} provider calls: {called}  provenance: {:?}",
            out.text,
            memory.provenance(category, label)
        );
    }
    println!("memory now holds {} labels", memory.len());
}
