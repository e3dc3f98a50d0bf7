//! The turn-taking state machine. Every mutation is recorded as a
//! [`SessionEvent`] that carries the pipeline results it produced, so a
//! session is a pure fold over its event log.

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicI64, AtomicU64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cards::{build_deck, CardDeck, DeckRequest, DeckSettings, TranslationMemory};
use crate::domain::{
    exchange_count, validate_profile, CardIdentity, ConversationTopic, DialogueMessage, DyadId,
    DyadProfile, ProfileViolation, SessionId,
};
use crate::guide::{
    inspect_previous_message, prepare_parent_turn, reveal_example, GuideTurnRecord, Inspection,
    ParentGuide, RevealedExample,
};
use crate::provider::{AssetSink, ProviderError, ProviderSet};
use crate::similarity::SimilarityStore;

pub const DEFAULT_STAR_CAP: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SessionState {
    ParentTurn,
    ChildTurn,
    Ended,
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassSource {
    HardwareButton,
    UiButton,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnPassEvent {
    pub session_id: SessionId,
    pub from_state: SessionState,
    pub occurred_at: DateTime<Utc>,
    pub source: PassSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum SelectionAction {
    Select { card_id: String, at: DateTime<Utc> },
    Deselect { position: usize, at: DateTime<Utc> },
}

/// Every deck shown on one child turn, plus the selection history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeckTurnRecord {
    pub turn_index: usize,
    pub decks: Vec<CardDeck>,
    pub actions: Vec<SelectionAction>,
}

impl DeckTurnRecord {
    pub fn find_card(&self, card_id: &str) -> Option<&CardIdentity> {
        self.decks.iter().rev().find_map(|d| d.find(card_id))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: SessionId,
    pub dyad_id: DyadId,
    pub topic: ConversationTopic,
    pub state: SessionState,
    pub history: Vec<DialogueMessage>,
    pub guide_records: Vec<GuideTurnRecord>,
    pub deck_records: Vec<DeckTurnRecord>,
    /// Parent utterance staged for the current parent turn.
    pub pending_utterance: Option<String>,
    /// Child's selection for the current child turn, in order.
    pub selection: Vec<CardIdentity>,
    /// Inspector result for the last committed parent message, shown on the
    /// next parent turn.
    pub pending_feedback: Option<Inspection>,
    pub turn_passes: Vec<TurnPassEvent>,
    pub started_at: DateTime<Utc>,
    pub turn_started_at: DateTime<Utc>,
    pub ended_at: Option<DateTime<Utc>>,
    pub stars: Option<u32>,
    /// Sequence number of the last applied event.
    pub last_seq: u64,
}

impl Session {
    pub fn is_active(&self) -> bool {
        self.state != SessionState::Ended
    }

    pub fn current_guides(&self) -> Option<&GuideTurnRecord> {
        match self.state {
            SessionState::ParentTurn => self.guide_records.last(),
            _ => None,
        }
    }

    pub fn current_deck_turn(&self) -> Option<&DeckTurnRecord> {
        match self.state {
            SessionState::ChildTurn => self.deck_records.last(),
            _ => None,
        }
    }

    pub fn current_deck(&self) -> Option<&CardDeck> {
        self.current_deck_turn().and_then(|t| t.decks.last())
    }

    pub fn exchanges(&self) -> usize {
        exchange_count(&self.history)
    }

    pub fn duration_secs(&self) -> Option<i64> {
        self.ended_at
            .map(|end| (end - self.started_at).num_seconds())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("session serializes")
    }

    fn start(event: &SessionEvent) -> Result<Self, ReplayError> {
        let EventKind::Started {
            session_id,
            dyad_id,
            topic,
            guides,
        } = &event.kind
        else {
            return Err(ReplayError::new(
                event.seq,
                "log does not begin with a start event",
            ));
        };
        if event.seq != 0 {
            return Err(ReplayError::new(event.seq, "start event must carry seq 0"));
        }
        Ok(Self {
            session_id: session_id.clone(),
            dyad_id: dyad_id.clone(),
            topic: topic.clone(),
            state: SessionState::ParentTurn,
            history: Vec::new(),
            guide_records: vec![guides.clone()],
            deck_records: Vec::new(),
            pending_utterance: None,
            selection: Vec::new(),
            pending_feedback: None,
            turn_passes: Vec::new(),
            started_at: event.at,
            turn_started_at: event.at,
            ended_at: None,
            stars: None,
            last_seq: 0,
        })
    }

    fn commit_parent(&mut self, at: DateTime<Utc>) {
        let text = self.pending_utterance.take().unwrap_or_default();
        let index = self.history.len();
        self.history.push(DialogueMessage::parent(
            index,
            text,
            self.turn_started_at,
            at,
        ));
    }

    fn commit_child(&mut self, at: DateTime<Utc>) {
        let cards = std::mem::take(&mut self.selection);
        let index = self.history.len();
        self.history.push(DialogueMessage::child(
            index,
            cards,
            self.turn_started_at,
            at,
        ));
    }

    fn expect_state(&self, seq: u64, state: SessionState) -> Result<(), ReplayError> {
        if self.state == state {
            Ok(())
        } else {
            Err(ReplayError::new(
                seq,
                format!("event requires {state}, session is in {}", self.state),
            ))
        }
    }

    /// Applies one event. Fails, leaving the session untouched, if the event
    /// is not legal in the current state.
    pub fn apply(&mut self, event: &SessionEvent) -> Result<(), ReplayError> {
        let seq = event.seq;
        if seq != self.last_seq + 1 {
            return Err(ReplayError::new(
                seq,
                format!("expected seq {}", self.last_seq + 1),
            ));
        }
        let at = event.at;
        match &event.kind {
            EventKind::Started { .. } => {
                return Err(ReplayError::new(seq, "duplicate start event"));
            }
            EventKind::UtteranceStaged { text, .. } => {
                self.expect_state(seq, SessionState::ParentTurn)?;
                self.pending_utterance = Some(match self.pending_utterance.take() {
                    Some(prev) if !prev.is_empty() && !text.is_empty() => format!("{prev} {text}"),
                    Some(prev) if text.is_empty() => prev,
                    _ => text.clone(),
                });
            }
            EventKind::ExampleRevealed { guide_id, example } => {
                self.expect_state(seq, SessionState::ParentTurn)?;
                let guide = self
                    .guide_records
                    .last_mut()
                    .and_then(|r| r.guides.iter_mut().find(|g| &g.guide_id == guide_id))
                    .ok_or_else(|| ReplayError::new(seq, format!("unknown guide {guide_id}")))?;
                if guide.revealed {
                    return Err(ReplayError::new(seq, "guide already revealed"));
                }
                guide.revealed = true;
                guide.reveal_time = Some(at);
                guide.example_canonical = example.example_canonical.clone();
                guide.example_localized = example.example_localized.clone();
                guide.example_untranslated = example.untranslated;
            }
            EventKind::ParentTurnPassed {
                source,
                inspection,
                deck,
            } => {
                self.expect_state(seq, SessionState::ParentTurn)?;
                let child_index = self.history.len() + 1;
                if deck.turn_index != child_index || deck.refresh_ordinal != 0 {
                    return Err(ReplayError::new(
                        seq,
                        "initial deck does not match the turn",
                    ));
                }
                self.turn_passes.push(TurnPassEvent {
                    session_id: self.session_id.clone(),
                    from_state: SessionState::ParentTurn,
                    occurred_at: at,
                    source: *source,
                });
                self.commit_parent(at);
                self.pending_feedback = inspection.clone();
                self.deck_records.push(DeckTurnRecord {
                    turn_index: child_index,
                    decks: vec![deck.clone()],
                    actions: Vec::new(),
                });
                self.state = SessionState::ChildTurn;
                self.turn_started_at = at;
            }
            EventKind::CardSelected { card_id } => {
                self.expect_state(seq, SessionState::ChildTurn)?;
                let record = self.deck_records.last_mut().expect("child turn has decks");
                let card = record
                    .find_card(card_id)
                    .cloned()
                    .ok_or_else(|| ReplayError::new(seq, format!("unknown card {card_id}")))?;
                record.actions.push(SelectionAction::Select {
                    card_id: card_id.clone(),
                    at,
                });
                self.selection.push(card);
            }
            EventKind::CardDeselected { position } => {
                self.expect_state(seq, SessionState::ChildTurn)?;
                if *position >= self.selection.len() {
                    return Err(ReplayError::new(seq, "deselect position out of range"));
                }
                self.selection.remove(*position);
                let record = self.deck_records.last_mut().expect("child turn has decks");
                record.actions.push(SelectionAction::Deselect {
                    position: *position,
                    at,
                });
            }
            EventKind::DeckRefreshed { deck } => {
                self.expect_state(seq, SessionState::ChildTurn)?;
                let record = self.deck_records.last_mut().expect("child turn has decks");
                if deck.turn_index != record.turn_index
                    || deck.refresh_ordinal != record.decks.len()
                {
                    return Err(ReplayError::new(seq, "refreshed deck out of order"));
                }
                record.decks.push(deck.clone());
            }
            EventKind::ChildTurnPassed { source, guides } => {
                self.expect_state(seq, SessionState::ChildTurn)?;
                if guides.turn_index != self.history.len() + 1 {
                    return Err(ReplayError::new(seq, "guides do not match the turn"));
                }
                self.turn_passes.push(TurnPassEvent {
                    session_id: self.session_id.clone(),
                    from_state: SessionState::ChildTurn,
                    occurred_at: at,
                    source: *source,
                });
                self.commit_child(at);
                self.pending_feedback = None;
                self.guide_records.push(guides.clone());
                self.state = SessionState::ParentTurn;
                self.turn_started_at = at;
            }
            EventKind::Ended { star_cap } => {
                match self.state {
                    SessionState::Ended => {
                        return Err(ReplayError::new(seq, "session already ended"));
                    }
                    SessionState::ParentTurn => {
                        if self.pending_utterance.is_some() {
                            self.commit_parent(at);
                        }
                    }
                    SessionState::ChildTurn => {
                        if !self.selection.is_empty() {
                            self.commit_child(at);
                        }
                    }
                }
                let exchanges = u32::try_from(self.exchanges()).unwrap_or(u32::MAX);
                self.stars = Some(exchanges.min(*star_cap));
                self.pending_utterance = None;
                self.selection.clear();
                self.pending_feedback = None;
                self.state = SessionState::Ended;
                self.ended_at = Some(at);
            }
        }
        self.last_seq = seq;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    pub at: DateTime<Utc>,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    Started {
        session_id: SessionId,
        dyad_id: DyadId,
        topic: ConversationTopic,
        guides: GuideTurnRecord,
    },
    UtteranceStaged {
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        audio_asset: Option<String>,
    },
    ExampleRevealed {
        guide_id: String,
        example: RevealedExample,
    },
    ParentTurnPassed {
        source: PassSource,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        inspection: Option<Inspection>,
        deck: CardDeck,
    },
    CardSelected {
        card_id: String,
    },
    CardDeselected {
        position: usize,
    },
    DeckRefreshed {
        deck: CardDeck,
    },
    ChildTurnPassed {
        source: PassSource,
        guides: GuideTurnRecord,
    },
    Ended {
        star_cap: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("event {seq}: {message}")]
pub struct ReplayError {
    pub seq: u64,
    pub message: String,
}

impl ReplayError {
    fn new(seq: u64, message: impl Into<String>) -> Self {
        Self {
            seq,
            message: message.into(),
        }
    }
}

/// Rebuilds a session from its log.
pub fn replay(events: &[SessionEvent]) -> Result<Session, ReplayError> {
    let (first, rest) = events
        .split_first()
        .ok_or_else(|| ReplayError::new(0, "empty event log"))?;
    let mut session = Session::start(first)?;
    for event in rest {
        session.apply(event)?;
    }
    Ok(session)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SessionError {
    #[error("unknown dyad {0}")]
    UnknownDyad(DyadId),
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("unknown guide {0}")]
    UnknownGuide(String),
    #[error("card {0} is not in any deck of the current turn")]
    UnknownCard(String),
    #[error("operation needs {expected}, session is in {actual}")]
    WrongState {
        expected: SessionState,
        actual: SessionState,
    },
    #[error("session has ended")]
    SessionEnded,
    #[error("dyad already has active session {0}")]
    DyadBusy(SessionId),
    #[error("invalid topic: {0}")]
    InvalidTopic(String),
    #[error("no selection at position {position} (selection has {len})")]
    BadPosition { position: usize, len: usize },
    #[error("audio could not be transcribed; please retry")]
    UnrecognizedAudio,
    #[error("invalid profile: {}", join_violations(.0))]
    InvalidProfile(Vec<ProfileViolation>),
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("storage failure: {0}")]
    Storage(String),
}

fn join_violations(violations: &[ProfileViolation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl SessionError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::UnknownDyad(_) => "UnknownDyad",
            Self::UnknownSession(_) => "UnknownSession",
            Self::UnknownGuide(_) => "UnknownGuide",
            Self::UnknownCard(_) => "UnknownCard",
            Self::WrongState { .. } => "WrongState",
            Self::SessionEnded => "SessionEnded",
            Self::DyadBusy(_) => "DyadBusy",
            Self::InvalidTopic(_) => "InvalidTopic",
            Self::BadPosition { .. } => "BadPosition",
            Self::UnrecognizedAudio => "UnrecognizedAudio",
            Self::InvalidProfile(_) => "InvalidProfile",
            Self::ProviderUnavailable(_) => "ProviderUnavailable",
            Self::Storage(_) => "Storage",
        }
    }
}

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Advances by a fixed step on every reading.
pub struct StepClock {
    start: DateTime<Utc>,
    step_ms: i64,
    ticks: AtomicI64,
}

impl StepClock {
    pub fn new(start: DateTime<Utc>, step: Duration) -> Self {
        Self {
            start,
            step_ms: step.num_milliseconds(),
            ticks: AtomicI64::new(0),
        }
    }
}

impl Clock for StepClock {
    fn now(&self) -> DateTime<Utc> {
        let n = self.ticks.fetch_add(1, Ordering::SeqCst);
        self.start + Duration::milliseconds(n * self.step_ms)
    }
}

/// Durable destination for profiles and session events.
pub trait Journal: Send + Sync {
    fn append_event(&self, session_id: &SessionId, event: &SessionEvent) -> std::io::Result<()>;
    fn save_profile(&self, profile: &DyadProfile) -> std::io::Result<()>;
}

/// Journal that keeps everything in memory.
#[derive(Default)]
pub struct MemoryJournal {
    events: Mutex<HashMap<SessionId, Vec<SessionEvent>>>,
    profiles: Mutex<HashMap<DyadId, DyadProfile>>,
}

impl MemoryJournal {
    pub fn events(&self, session_id: &SessionId) -> Vec<SessionEvent> {
        self.events
            .lock()
            .get(session_id)
            .cloned()
            .unwrap_or_default()
    }

    pub fn profile(&self, dyad_id: &DyadId) -> Option<DyadProfile> {
        self.profiles.lock().get(dyad_id).cloned()
    }
}

impl Journal for MemoryJournal {
    fn append_event(&self, session_id: &SessionId, event: &SessionEvent) -> std::io::Result<()> {
        self.events
            .lock()
            .entry(session_id.clone())
            .or_default()
            .push(event.clone());
        Ok(())
    }

    fn save_profile(&self, profile: &DyadProfile) -> std::io::Result<()> {
        self.profiles
            .lock()
            .insert(profile.dyad_id.clone(), profile.clone());
        Ok(())
    }
}

/// Providers and shared stores the pipelines draw on.
#[derive(Clone)]
pub struct Services {
    pub providers: ProviderSet,
    /// Reference pools: example translations, label translations, symbols.
    pub pool: Arc<SimilarityStore>,
    pub memory: Arc<TranslationMemory>,
    /// Where uploaded audio is kept.
    pub assets: Option<Arc<dyn AssetSink>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub star_cap: u32,
    pub deck: DeckSettings,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            star_cap: DEFAULT_STAR_CAP,
            deck: DeckSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceOutcome {
    pub transcript: String,
    pub pending: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassOutcome {
    pub state: SessionState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deck: Option<CardDeck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guides: Option<GuideTurnRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectOutcome {
    pub selection: Vec<CardIdentity>,
    pub voice_ref: Option<String>,
}

/// Content-addressed id for uploaded audio.
pub fn audio_asset_id(bytes: &[u8]) -> String {
    format!("audio-{}", &hex::encode(Sha256::digest(bytes))[..24])
}

/// Content-addressed id for uploaded card images.
pub fn image_asset_id(bytes: &[u8]) -> String {
    format!("image-{}", &hex::encode(Sha256::digest(bytes))[..24])
}

pub struct Engine {
    services: Services,
    config: EngineConfig,
    clock: Arc<dyn Clock>,
    journal: Option<Arc<dyn Journal>>,
    dyads: RwLock<HashMap<DyadId, DyadProfile>>,
    sessions: RwLock<HashMap<SessionId, Arc<Mutex<Session>>>>,
    active: Mutex<HashMap<DyadId, SessionId>>,
    next_id: AtomicU64,
}

impl Engine {
    pub fn new(
        services: Services,
        config: EngineConfig,
        clock: Arc<dyn Clock>,
        journal: Option<Arc<dyn Journal>>,
    ) -> Self {
        Self {
            services,
            config,
            clock,
            journal,
            dyads: RwLock::new(HashMap::new()),
            sessions: RwLock::new(HashMap::new()),
            active: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn services(&self) -> &Services {
        &self.services
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// Loads previously persisted state without writing to the journal.
    pub fn restore(
        &self,
        profiles: Vec<DyadProfile>,
        sessions: Vec<Session>,
    ) -> Result<(), SessionError> {
        let mut dyads = self.dyads.write();
        for profile in profiles {
            dyads.insert(profile.dyad_id.clone(), profile);
        }
        let mut map = self.sessions.write();
        let mut active = self.active.lock();
        for session in sessions {
            if session.is_active() {
                if let Some(other) = active.get(&session.dyad_id) {
                    return Err(SessionError::DyadBusy(other.clone()));
                }
                active.insert(session.dyad_id.clone(), session.session_id.clone());
            }
            map.insert(session.session_id.clone(), Arc::new(Mutex::new(session)));
        }
        self.next_id.store(map.len() as u64 + 1, Ordering::SeqCst);
        Ok(())
    }

    pub fn upsert_dyad(&self, profile: DyadProfile) -> Result<DyadProfile, SessionError> {
        let violations = validate_profile(&profile);
        if !violations.is_empty() {
            return Err(SessionError::InvalidProfile(violations));
        }
        let mut dyads = self.dyads.write();
        if let Some(journal) = &self.journal {
            journal
                .save_profile(&profile)
                .map_err(|e| SessionError::Storage(e.to_string()))?;
        }
        dyads.insert(profile.dyad_id.clone(), profile.clone());
        Ok(profile)
    }

    pub fn dyad(&self, dyad_id: &DyadId) -> Result<DyadProfile, SessionError> {
        self.dyads
            .read()
            .get(dyad_id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownDyad(dyad_id.clone()))
    }

    pub fn dyads(&self) -> Vec<DyadProfile> {
        let mut all: Vec<_> = self.dyads.read().values().cloned().collect();
        all.sort_by(|a, b| a.dyad_id.cmp(&b.dyad_id));
        all
    }

    /// Registers a custom image for `label` on the dyad's profile.
    pub fn set_custom_image(
        &self,
        dyad_id: &DyadId,
        label: &str,
        asset_id: &str,
    ) -> Result<DyadProfile, SessionError> {
        let mut profile = self.dyad(dyad_id)?;
        profile
            .custom_images
            .insert(label.trim().to_string(), asset_id.to_string());
        self.upsert_dyad(profile)
    }

    /// Stores an uploaded picture and registers it for `label`. Returns the
    /// asset id and the updated profile.
    pub fn upload_custom_image(
        &self,
        dyad_id: &DyadId,
        label: &str,
        bytes: &[u8],
    ) -> Result<(String, DyadProfile), SessionError> {
        self.dyad(dyad_id)?;
        if label.trim().is_empty() {
            return Err(SessionError::InvalidProfile(vec![
                ProfileViolation::EmptyCustomImageKey,
            ]));
        }
        let sink = self
            .services
            .assets
            .as_ref()
            .ok_or_else(|| SessionError::Storage("no asset storage configured".into()))?;
        let asset_id = image_asset_id(bytes);
        sink.put_asset(&asset_id, bytes)
            .map_err(|e| SessionError::Storage(e.to_string()))?;
        let profile = self.set_custom_image(dyad_id, label, &asset_id)?;
        Ok((asset_id, profile))
    }

    pub fn session(&self, session_id: &SessionId) -> Result<Session, SessionError> {
        Ok(self.handle(session_id)?.lock().clone())
    }

    pub fn sessions(&self) -> Vec<Session> {
        let handles: Vec<_> = self.sessions.read().values().cloned().collect();
        let mut all: Vec<Session> = handles.iter().map(|h| h.lock().clone()).collect();
        all.sort_by(|a, b| {
            a.started_at
                .cmp(&b.started_at)
                .then_with(|| a.session_id.cmp(&b.session_id))
        });
        all
    }

    pub fn active_session(&self, dyad_id: &DyadId) -> Option<SessionId> {
        self.active.lock().get(dyad_id).cloned()
    }

    fn handle(&self, session_id: &SessionId) -> Result<Arc<Mutex<Session>>, SessionError> {
        self.sessions
            .read()
            .get(session_id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownSession(session_id.clone()))
    }

    fn record(&self, session: &mut Session, kind: EventKind) -> Result<(), SessionError> {
        let event = SessionEvent {
            seq: session.last_seq + 1,
            at: self.clock.now(),
            kind,
        };
        let mut next = session.clone();
        next.apply(&event)
            .map_err(|e| SessionError::Storage(format!("engine produced an illegal event: {e}")))?;
        if let Some(journal) = &self.journal {
            journal
                .append_event(&session.session_id, &event)
                .map_err(|e| SessionError::Storage(e.to_string()))?;
        }
        *session = next;
        Ok(())
    }

    fn require(session: &Session, state: SessionState) -> Result<(), SessionError> {
        match session.state {
            SessionState::Ended => Err(SessionError::SessionEnded),
            actual if actual != state => Err(SessionError::WrongState {
                expected: state,
                actual,
            }),
            _ => Ok(()),
        }
    }

    pub fn start_session(
        &self,
        dyad_id: &DyadId,
        topic: ConversationTopic,
    ) -> Result<Session, SessionError> {
        let dyad = self.dyad(dyad_id)?;
        if !topic.is_valid_for(&dyad) {
            return Err(SessionError::InvalidTopic(format!(
                "{} is not available for dyad {dyad_id}",
                topic.describe()
            )));
        }
        let session_id = {
            let mut active = self.active.lock();
            if let Some(existing) = active.get(dyad_id) {
                return Err(SessionError::DyadBusy(existing.clone()));
            }
            let sessions = self.sessions.read();
            let id = loop {
                let n = self.next_id.fetch_add(1, Ordering::SeqCst);
                let candidate = SessionId::new(format!("{dyad_id}-s{n}"));
                if !sessions.contains_key(&candidate) {
                    break candidate;
                }
            };
            active.insert(dyad_id.clone(), id.clone());
            id
        };
        let release = || {
            self.active.lock().remove(dyad_id);
        };
        let providers = &self.services.providers;
        let guides = prepare_parent_turn(
            &providers.completion,
            providers.translator.as_ref(),
            &[],
            &dyad,
            &topic,
            0,
            0,
            None,
        );
        let event = SessionEvent {
            seq: 0,
            at: self.clock.now(),
            kind: EventKind::Started {
                session_id: session_id.clone(),
                dyad_id: dyad_id.clone(),
                topic,
                guides,
            },
        };
        let session = Session::start(&event).expect("start event is well-formed");
        if let Some(journal) = &self.journal {
            if let Err(e) = journal.append_event(&session_id, &event) {
                release();
                return Err(SessionError::Storage(e.to_string()));
            }
        }
        self.sessions
            .write()
            .insert(session_id, Arc::new(Mutex::new(session.clone())));
        Ok(session)
    }

    pub fn submit_text(
        &self,
        session_id: &SessionId,
        text: &str,
    ) -> Result<UtteranceOutcome, SessionError> {
        self.stage_utterance(session_id, text.trim().to_string(), None)
    }

    /// Transcribes in the target locale, the language the parent speaks at
    /// home.
    pub fn submit_audio(
        &self,
        session_id: &SessionId,
        audio: &[u8],
    ) -> Result<UtteranceOutcome, SessionError> {
        let handle = self.handle(session_id)?;
        let dyad_id = {
            let session = handle.lock();
            Self::require(&session, SessionState::ParentTurn)?;
            session.dyad_id.clone()
        };
        let dyad = self.dyad(&dyad_id)?;
        let transcript = match self
            .services
            .providers
            .transcriber
            .transcribe(audio, &dyad.locale_pair.target)
        {
            Ok(text) => text,
            Err(ProviderError::UnrecognizedAudio | ProviderError::EmptyInput) => {
                return Err(SessionError::UnrecognizedAudio)
            }
            Err(e) => return Err(SessionError::ProviderUnavailable(e.to_string())),
        };
        let asset = audio_asset_id(audio);
        if let Some(assets) = &self.services.assets {
            assets
                .put_asset(&asset, audio)
                .map_err(|e| SessionError::Storage(e.to_string()))?;
        }
        self.stage_utterance(session_id, transcript, Some(asset))
    }

    fn stage_utterance(
        &self,
        session_id: &SessionId,
        text: String,
        audio_asset: Option<String>,
    ) -> Result<UtteranceOutcome, SessionError> {
        let handle = self.handle(session_id)?;
        let mut session = handle.lock();
        Self::require(&session, SessionState::ParentTurn)?;
        self.record(
            &mut session,
            EventKind::UtteranceStaged {
                text: text.clone(),
                audio_asset,
            },
        )?;
        Ok(UtteranceOutcome {
            transcript: text,
            pending: session.pending_utterance.clone().unwrap_or_default(),
        })
    }

    pub fn reveal_example(
        &self,
        session_id: &SessionId,
        guide_id: &str,
    ) -> Result<ParentGuide, SessionError> {
        let handle = self.handle(session_id)?;
        let mut session = handle.lock();
        Self::require(&session, SessionState::ParentTurn)?;
        let guide = session
            .current_guides()
            .and_then(|r| r.guides.iter().find(|g| g.guide_id == guide_id))
            .cloned()
            .ok_or_else(|| SessionError::UnknownGuide(guide_id.to_string()))?;
        if guide.revealed {
            return Ok(guide);
        }
        let dyad = self.dyad(&session.dyad_id)?;
        let example = reveal_example(
            &self.services.providers.completion,
            &self.services.pool,
            &guide,
            &session.history,
            &dyad,
        );
        self.record(
            &mut session,
            EventKind::ExampleRevealed {
                guide_id: guide_id.to_string(),
                example,
            },
        )?;
        Ok(session
            .current_guides()
            .and_then(|r| r.guides.iter().find(|g| g.guide_id == guide_id))
            .cloned()
            .expect("revealed guide is present"))
    }

    fn deck_for(
        &self,
        session: &Session,
        dyad: &DyadProfile,
        history: &[DialogueMessage],
        turn_index: usize,
        previous: &[CardDeck],
    ) -> CardDeck {
        build_deck(
            &self.services.providers,
            &self.services.memory,
            &self.services.pool,
            &self.config.deck,
            &DeckRequest {
                session_id: &session.session_id,
                turn_index,
                refresh_ordinal: previous.len(),
                history,
                dyad,
                topic: &session.topic,
                previous_decks: previous,
            },
        )
    }

    /// Switches turns. `from_state`, when given, must match the session.
    pub fn pass_turn(
        &self,
        session_id: &SessionId,
        from_state: Option<SessionState>,
        source: PassSource,
    ) -> Result<PassOutcome, SessionError> {
        let handle = self.handle(session_id)?;
        let mut session = handle.lock();
        if session.state == SessionState::Ended {
            return Err(SessionError::SessionEnded);
        }
        if let Some(expected) = from_state {
            Self::require(&session, expected)?;
        }
        let dyad = self.dyad(&session.dyad_id)?;
        let providers = &self.services.providers;
        match session.state {
            SessionState::ParentTurn => {
                let mut history = session.history.clone();
                history.push(DialogueMessage::parent(
                    history.len(),
                    session.pending_utterance.clone().unwrap_or_default(),
                    session.turn_started_at,
                    session.turn_started_at,
                ));
                let inspection = inspect_previous_message(&providers.completion, &history);
                let deck = self.deck_for(&session, &dyad, &history, history.len(), &[]);
                self.record(
                    &mut session,
                    EventKind::ParentTurnPassed {
                        source,
                        inspection,
                        deck: deck.clone(),
                    },
                )?;
                Ok(PassOutcome {
                    state: session.state,
                    deck: Some(deck),
                    guides: None,
                })
            }
            SessionState::ChildTurn => {
                let mut history = session.history.clone();
                history.push(DialogueMessage::child(
                    history.len(),
                    session.selection.clone(),
                    session.turn_started_at,
                    session.turn_started_at,
                ));
                let guides = prepare_parent_turn(
                    &providers.completion,
                    providers.translator.as_ref(),
                    &history,
                    &dyad,
                    &session.topic,
                    history.len(),
                    exchange_count(&history),
                    session.pending_feedback.as_ref(),
                );
                self.record(
                    &mut session,
                    EventKind::ChildTurnPassed {
                        source,
                        guides: guides.clone(),
                    },
                )?;
                Ok(PassOutcome {
                    state: session.state,
                    deck: None,
                    guides: Some(guides),
                })
            }
            SessionState::Ended => unreachable!("checked above"),
        }
    }

    pub fn select_card(
        &self,
        session_id: &SessionId,
        card_id: &str,
    ) -> Result<SelectOutcome, SessionError> {
        let handle = self.handle(session_id)?;
        let mut session = handle.lock();
        Self::require(&session, SessionState::ChildTurn)?;
        let card = session
            .current_deck_turn()
            .and_then(|t| t.find_card(card_id))
            .cloned()
            .ok_or_else(|| SessionError::UnknownCard(card_id.to_string()))?;
        self.record(
            &mut session,
            EventKind::CardSelected {
                card_id: card_id.to_string(),
            },
        )?;
        Ok(SelectOutcome {
            selection: session.selection.clone(),
            voice_ref: card.voice_ref,
        })
    }

    pub fn deselect_card(
        &self,
        session_id: &SessionId,
        position: usize,
    ) -> Result<Vec<CardIdentity>, SessionError> {
        let handle = self.handle(session_id)?;
        let mut session = handle.lock();
        Self::require(&session, SessionState::ChildTurn)?;
        if position >= session.selection.len() {
            return Err(SessionError::BadPosition {
                position,
                len: session.selection.len(),
            });
        }
        self.record(&mut session, EventKind::CardDeselected { position })?;
        Ok(session.selection.clone())
    }

    pub fn refresh_deck(&self, session_id: &SessionId) -> Result<CardDeck, SessionError> {
        let handle = self.handle(session_id)?;
        let mut session = handle.lock();
        Self::require(&session, SessionState::ChildTurn)?;
        let dyad = self.dyad(&session.dyad_id)?;
        let turn = session.current_deck_turn().expect("child turn has decks");
        let deck = self.deck_for(
            &session,
            &dyad,
            &session.history,
            turn.turn_index,
            &turn.decks,
        );
        self.record(
            &mut session,
            EventKind::DeckRefreshed { deck: deck.clone() },
        )?;
        Ok(deck)
    }

    /// Ends the session. Ending an ended session returns it unchanged.
    pub fn end_session(&self, session_id: &SessionId) -> Result<Session, SessionError> {
        let handle = self.handle(session_id)?;
        let mut session = handle.lock();
        if session.state == SessionState::Ended {
            return Ok(session.clone());
        }
        self.record(
            &mut session,
            EventKind::Ended {
                star_cap: self.config.star_cap,
            },
        )?;
        let mut active = self.active.lock();
        if active.get(&session.dyad_id) == Some(&session.session_id) {
            active.remove(&session.dyad_id);
        }
        Ok(session.clone())
    }
}
