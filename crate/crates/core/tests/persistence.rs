mod common;

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::sync::Arc;

use chrono::Duration;
use common::{data_dir, profile, t0};
use dyadtalk::app::{caption_symbols, App, AppError};
use dyadtalk::config::ServiceConfig;
use dyadtalk::domain::{CardCategory, ConversationTopic, DyadId, LocalePair};
use dyadtalk::provider::ProviderSet;
use dyadtalk::session::{PassSource, SessionState, StepClock};
use dyadtalk::similarity::{SymbolRecord, LABEL_TRANSLATIONS, SYMBOL_CAPTIONS};
use dyadtalk::store::StoreError;

fn config(dir: &std::path::Path) -> ServiceConfig {
    let mut config = ServiceConfig::default();
    config.storage.path = dir.to_path_buf();
    config.providers.mock_transcripts = Some(data_dir().join("transcripts"));
    config.seed.translation_memory = Some(data_dir().join("translation-memory.jsonl"));
    config.seed.example_translations = Some(data_dir().join("example-translations.jsonl"));
    config.seed.symbols = Some(data_dir().join("symbols.jsonl"));
    config
}

fn open(dir: &std::path::Path) -> App {
    App::open_with_clock(
        config(dir),
        Arc::new(StepClock::new(t0(), Duration::seconds(3))),
    )
    .unwrap()
}

#[test]
fn seeding_reports_sizes_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let app = open(dir.path());
    let first = app.seed_from_config().unwrap();
    assert_eq!(first.memory_added, 305);
    assert_eq!(first.memory_size, 305);
    assert_eq!(first.examples_added, 20);
    assert_eq!(first.symbols_added, 49);
    let second = app.seed_from_config().unwrap();
    assert_eq!(
        (
            second.memory_added,
            second.examples_added,
            second.symbols_added
        ),
        (0, 0, 0)
    );
    assert_eq!(second.memory_size, 305);
    drop(app);

    let reopened = open(dir.path());
    let services = reopened.engine.services();
    assert_eq!(services.memory.len(), 305);
    assert_eq!(services.pool.len(LABEL_TRANSLATIONS), 305);
    assert_eq!(services.pool.len(SYMBOL_CAPTIONS), 49);
    assert_eq!(reopened.seed_from_config().unwrap().memory_added, 0);

    let counts = reopened.reembed().unwrap();
    assert_eq!(counts[LABEL_TRANSLATIONS], 305);
}

#[test]
fn sessions_survive_a_restart_mid_conversation() {
    let dir = tempfile::tempdir().unwrap();
    let (id, before) = {
        let app = open(dir.path());
        app.seed_from_config().unwrap();
        let engine = &app.engine;
        engine
            .upsert_dyad(profile("han", LocalePair::new("en", "ko")))
            .unwrap();
        let id = engine
            .start_session(&DyadId::new("han"), ConversationTopic::recall())
            .unwrap()
            .session_id;
        let clip = fs::read(data_dir().join("transcripts/clip-1.wav")).unwrap();
        let heard = engine.submit_audio(&id, &clip).unwrap();
        assert_eq!(
            heard.transcript,
            "did you see the fire truck at the station today"
        );
        let deck = engine
            .pass_turn(&id, None, PassSource::HardwareButton)
            .unwrap()
            .deck
            .unwrap();
        engine
            .select_card(&id, &deck.category(CardCategory::Topic)[0].card_id)
            .unwrap();
        let snapshot = engine.session(&id).unwrap();
        (id, snapshot)
    };

    let app = open(dir.path());
    let after = app.engine.session(&id).unwrap();
    assert_eq!(after, before);
    assert_eq!(after.state, SessionState::ChildTurn);
    assert_eq!(
        app.engine.active_session(&DyadId::new("han")),
        Some(id.clone())
    );
    assert_eq!(app.engine.dyads().len(), 1);

    let audio_asset = app.store.read_asset(&dyadtalk::session::audio_asset_id(
        &fs::read(data_dir().join("transcripts/clip-1.wav")).unwrap(),
    ));
    assert!(audio_asset.unwrap().is_some());

    app.engine
        .pass_turn(&id, None, PassSource::UiButton)
        .unwrap();
    let ended = app.engine.end_session(&id).unwrap();
    assert_eq!(ended.stars, Some(1));

    let text = app
        .transcript(&DyadId::new("han"), t0().date_naive())
        .unwrap();
    assert!(text.contains("P: did you see the fire truck at the station today"));
    let report = app.report(None, &[]).unwrap();
    assert_eq!(report.total_cards, 1);
}

#[test]
fn a_corrupt_log_names_the_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let id = {
        let app = open(dir.path());
        app.engine
            .upsert_dyad(profile("han", LocalePair::new("en", "ko")))
            .unwrap();
        app.engine
            .start_session(&DyadId::new("han"), ConversationTopic::plan())
            .unwrap()
            .session_id
    };
    let log = dir.path().join("sessions").join(format!("{id}.jsonl"));
    let mut file = OpenOptions::new().append(true).open(&log).unwrap();
    writeln!(file, "{{not json").unwrap();
    drop(file);

    match App::open(config(dir.path())) {
        Err(AppError::Store(StoreError::CorruptLog { path, line, .. })) => {
            assert!(path.ends_with(format!("{id}.jsonl")));
            assert_eq!(line, 2);
        }
        Err(other) => panic!("unexpected error: {other}"),
        Ok(_) => panic!("corrupt log was accepted"),
    }
}

#[test]
fn captioning_fills_missing_captions() {
    let (providers, _) = ProviderSet::mock(1);
    let input = File::open(data_dir().join("symbols-uncaptioned.jsonl")).unwrap();
    let mut out = Vec::new();
    let written = caption_symbols(&providers.completion, input, &mut out).unwrap();
    assert_eq!(written, 3);
    let records: Vec<SymbolRecord> = String::from_utf8(out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(records.iter().all(|r| !r.caption.trim().is_empty()));
}
