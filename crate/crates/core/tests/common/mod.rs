#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use dyadtalk::cards::TranslationMemory;
use dyadtalk::domain::{DyadId, DyadProfile, LocalePair, ParentRole};
use dyadtalk::provider::mock::MockHandles;
use dyadtalk::provider::ProviderSet;
use dyadtalk::session::{Engine, EngineConfig, Journal, Services, StepClock};
use dyadtalk::similarity::SimilarityStore;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn t0() -> DateTime<Utc> {
    DateTime::from_timestamp(1_714_546_800, 0).unwrap()
}

pub fn profile(id: &str, locales: LocalePair) -> DyadProfile {
    DyadProfile {
        dyad_id: DyadId::new(id),
        parent_role: ParentRole::Mother,
        child_name: "Minho".into(),
        child_age: 9,
        child_characteristics: "uses single words".into(),
        interests: vec!["fire truck".into(), "drone".into()],
        custom_images: BTreeMap::new(),
        locale_pair: locales,
    }
}

pub fn mock_engine(seed: u64, journal: Option<Arc<dyn Journal>>) -> (Engine, MockHandles) {
    let (providers, handles) = ProviderSet::mock(seed);
    let services = Services {
        pool: Arc::new(SimilarityStore::new(handles.embedder.clone())),
        providers,
        memory: Arc::new(TranslationMemory::new()),
        assets: None,
    };
    let clock = Arc::new(StepClock::new(t0(), Duration::seconds(5)));
    (
        Engine::new(services, EngineConfig::default(), clock, journal),
        handles,
    )
}
