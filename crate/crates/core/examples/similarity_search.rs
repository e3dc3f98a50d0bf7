//! Loads the example-translation pool and retrieves the nearest references
//! for a few queries.
//!
//! cargo run -p dyadtalk --example similarity_search

use std::fs;
use std::path::Path;
use std::sync::Arc;

use dyadtalk::guide::add_example_reference;
use dyadtalk::provider::mock::TrigramEmbedder;
use dyadtalk::similarity::{SimilarityStore, EXAMPLE_TRANSLATIONS};

#[derive(serde::Deserialize)]
struct Pair {
    source: String,
    target: String,
}

fn main() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/example-translations.jsonl");
    let store = SimilarityStore::new(Arc::new(TrigramEmbedder::new()));
    for line in fs::read_to_string(path).unwrap().lines() {
        let pair: Pair = serde_json::from_str(line).unwrap();
        add_example_reference(&store, &pair.source, &pair.target).unwrap();
    }
    println!("{} references loaded", store.len(EXAMPLE_TRANSLATIONS));

    for query in [
        "Did you see the bus?",
        "How did you feel about it?",
        "What shall we eat?",
    ] {
        println!("\n{query}");
        for hit in store.top_k(EXAMPLE_TRANSLATIONS, query, 3).unwrap() {
            println!(
                "  {:.3}  {}  ->  {}",
                hit.score,
                hit.entry.key_text,
                hit.entry.payload["target"].as_str().unwrap_or_default()
            );
        }
    }
}
