//! Usage statistics over session logs and the plain-text daily transcript.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::domain::{
    check_history, CardCategory, DialogueMessage, DyadId, DyadProfile, Locale, SessionId, Speaker,
    TopicKind,
};
use crate::session::{replay, Session, SessionEvent};

pub const DEFAULT_TOP_K: usize = 20;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalyticsError {
    #[error("overlap is undefined for an empty set")]
    EmptySet,
    #[error("need at least two children with labels at turn {turn_index}, found {children}")]
    InsufficientData { turn_index: usize, children: usize },
    #[error("session {session_id}: record {record}: {message}")]
    CorruptLog {
        session_id: String,
        record: usize,
        message: String,
    },
    #[error("annotation line {line}: {message}")]
    BadAnnotation { line: usize, message: String },
}

/// `|a ∩ b| / min(|a|, |b|)`.
pub fn overlap_coefficient<T: Ord>(
    a: &BTreeSet<T>,
    b: &BTreeSet<T>,
) -> Result<f64, AnalyticsError> {
    if a.is_empty() || b.is_empty() {
        return Err(AnalyticsError::EmptySet);
    }
    let shared = a.intersection(b).count();
    Ok(shared as f64 / a.len().min(b.len()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    /// Labels shown in decks, refreshes included.
    #[default]
    Recommended,
    /// Labels the child picked.
    Selected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapOptions {
    pub k: usize,
    pub source: LabelSource,
    pub categories: Vec<CardCategory>,
}

impl Default for OverlapOptions {
    fn default() -> Self {
        Self {
            k: DEFAULT_TOP_K,
            source: LabelSource::Recommended,
            categories: vec![CardCategory::Topic, CardCategory::Action],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnOverlap {
    /// 1-based child-turn ordinal within a session.
    pub turn_index: usize,
    pub value: f64,
    pub children: usize,
    /// Children with fewer than `k` labels at this turn; all their labels were
    /// used.
    pub short_children: Vec<DyadId>,
}

/// Label frequencies per dyad at the `turn_index`-th child turn of each
/// session.
pub fn label_counts_at_turn(
    sessions: &[Session],
    turn_index: usize,
    options: &OverlapOptions,
) -> BTreeMap<DyadId, BTreeMap<String, usize>> {
    let mut counts: BTreeMap<DyadId, BTreeMap<String, usize>> = BTreeMap::new();
    let wanted = |c: CardCategory| options.categories.contains(&c);
    for session in sessions {
        let Some(ordinal) = turn_index.checked_sub(1) else {
            continue;
        };
        let per_child = counts.entry(session.dyad_id.clone()).or_default();
        match options.source {
            LabelSource::Recommended => {
                if let Some(record) = session.deck_records.get(ordinal) {
                    for card in record.decks.iter().flat_map(|d| d.all_cards()) {
                        if wanted(card.category) {
                            *per_child.entry(card.label_canonical.clone()).or_default() += 1;
                        }
                    }
                }
            }
            LabelSource::Selected => {
                let child = session
                    .history
                    .iter()
                    .filter(|m| m.speaker == Speaker::Child)
                    .nth(ordinal);
                for card in child
                    .and_then(|m| m.child_cards.as_deref())
                    .unwrap_or_default()
                {
                    if wanted(card.category) {
                        *per_child.entry(card.label_canonical.clone()).or_default() += 1;
                    }
                }
            }
        }
    }
    counts.retain(|_, labels| !labels.is_empty());
    counts
}

/// The `k` most frequent labels; ties go to the alphabetically first.
pub fn top_labels(counts: &BTreeMap<String, usize>, k: usize) -> BTreeSet<String> {
    let mut ranked: Vec<(&String, &usize)> = counts.iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
    ranked.into_iter().take(k).map(|(l, _)| l.clone()).collect()
}

/// Mean pairwise overlap of each child's top-k labels at one child turn.
pub fn top_k_overlap(
    sessions: &[Session],
    turn_index: usize,
    options: &OverlapOptions,
) -> Result<TurnOverlap, AnalyticsError> {
    let counts = label_counts_at_turn(sessions, turn_index, options);
    if counts.len() < 2 {
        return Err(AnalyticsError::InsufficientData {
            turn_index,
            children: counts.len(),
        });
    }
    let short_children = counts
        .iter()
        .filter(|(_, c)| c.len() < options.k)
        .map(|(d, _)| d.clone())
        .collect();
    let tops: Vec<BTreeSet<String>> = counts.values().map(|c| top_labels(c, options.k)).collect();
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..tops.len() {
        for j in i + 1..tops.len() {
            sum += overlap_coefficient(&tops[i], &tops[j])?;
            pairs += 1;
        }
    }
    Ok(TurnOverlap {
        turn_index,
        value: sum / pairs as f64,
        children: tops.len(),
        short_children,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub session_id: SessionId,
    pub turn_index: usize,
    pub adopted: bool,
}

pub fn parse_annotations(reader: impl Read) -> Result<Vec<Annotation>, AnalyticsError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| AnalyticsError::BadAnnotation {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| AnalyticsError::BadAnnotation {
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Period {
    pub from: NaiveDate,
    pub to: NaiveDate,
}

impl Period {
    pub fn contains(&self, date: NaiveDate) -> bool {
        self.from <= date && date <= self.to
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct CategoryCounts {
    pub topic: usize,
    pub action: usize,
    pub emotion: usize,
    pub core: usize,
}

impl CategoryCounts {
    pub fn total(&self) -> usize {
        self.topic + self.action + self.emotion + self.core
    }

    pub fn get(&self, category: CardCategory) -> usize {
        match category {
            CardCategory::Topic => self.topic,
            CardCategory::Action => self.action,
            CardCategory::Emotion => self.emotion,
            CardCategory::Core => self.core,
        }
    }

    fn bump(&mut self, category: CardCategory, by: usize) {
        match category {
            CardCategory::Topic => self.topic += by,
            CardCategory::Action => self.action += by,
            CardCategory::Emotion => self.emotion += by,
            CardCategory::Core => self.core += by,
        }
    }

    fn add(&mut self, other: &CategoryCounts) {
        for c in CardCategory::ALL {
            self.bump(c, other.get(c));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DyadUsage {
    pub dyad_id: DyadId,
    pub sessions: usize,
    pub sessions_per_day: BTreeMap<NaiveDate, usize>,
    pub topics: BTreeMap<TopicKind, usize>,
    pub total_exchanges: usize,
    pub mean_exchanges: f64,
    pub mean_session_secs: f64,
    pub mean_parent_turn_secs: f64,
    pub mean_child_turn_secs: f64,
    pub parent_turns: usize,
    pub mean_parent_syllables: f64,
    pub mean_parent_words: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ChildCardUsage {
    pub dyad_id: DyadId,
    pub counts: CategoryCounts,
    pub unique_labels: CategoryCounts,
    pub core_breakdown: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct AdoptionStats {
    pub annotated: usize,
    pub adopted: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct GuideStats {
    pub guides_shown: usize,
    pub per_direction: BTreeMap<String, usize>,
    pub feedback_per_category: BTreeMap<String, usize>,
    pub reveals: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adoption: Option<AdoptionStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct UsageReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<Period>,
    pub total_sessions: usize,
    pub total_cards: usize,
    pub category_totals: CategoryCounts,
    pub dyads: Vec<DyadUsage>,
    pub children: Vec<ChildCardUsage>,
    pub overlap: Vec<TurnOverlap>,
    /// Child turns where fewer than two children had labels.
    pub overlap_skipped: Vec<usize>,
    pub guides: GuideStats,
}

/// Hangul syllable blocks for locales written that way, whitespace-separated
/// words otherwise.
pub fn syllable_count(text: &str, locale: &Locale) -> usize {
    if locale.uses_syllable_blocks() {
        text.chars()
            .filter(|c| ('\u{AC00}'..='\u{D7A3}').contains(c))
            .count()
    } else {
        word_count(text)
    }
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

fn validate(session: &Session) -> Result<(), AnalyticsError> {
    let corrupt = |record: usize, message: String| AnalyticsError::CorruptLog {
        session_id: session.session_id.to_string(),
        record,
        message,
    };
    check_history(&session.history).map_err(|m| corrupt(0, m))?;
    for message in &session.history {
        let Some(cards) = &message.child_cards else {
            continue;
        };
        let record = session
            .deck_records
            .iter()
            .find(|r| r.turn_index == message.turn_index)
            .ok_or_else(|| corrupt(message.turn_index, "child turn has no decks".into()))?;
        for card in cards {
            if record.find_card(&card.card_id).as_ref() != Some(&card) {
                return Err(corrupt(
                    message.turn_index,
                    format!("card {} was not shown on this turn", card.card_id),
                ));
            }
        }
    }
    Ok(())
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn turn_secs(message: &DialogueMessage) -> f64 {
    (message.ended_at - message.started_at).num_milliseconds() as f64 / 1000.0
}

/// Replays raw event logs, then reports on them.
pub fn build_report_from_events(
    logs: &[Vec<SessionEvent>],
    profiles: &[DyadProfile],
    period: Option<Period>,
    annotations: &[Annotation],
    overlap: &OverlapOptions,
) -> Result<UsageReport, AnalyticsError> {
    let sessions = logs
        .iter()
        .enumerate()
        .map(|(i, events)| {
            replay(events).map_err(|e| AnalyticsError::CorruptLog {
                session_id: events
                    .first()
                    .and_then(|ev| match &ev.kind {
                        crate::session::EventKind::Started { session_id, .. } => {
                            Some(session_id.to_string())
                        }
                        _ => None,
                    })
                    .unwrap_or_else(|| format!("log #{i}")),
                record: e.seq as usize,
                message: e.message,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    build_report(&sessions, profiles, period, annotations, overlap)
}

pub fn build_report(
    sessions: &[Session],
    profiles: &[DyadProfile],
    period: Option<Period>,
    annotations: &[Annotation],
    overlap: &OverlapOptions,
) -> Result<UsageReport, AnalyticsError> {
    for session in sessions {
        validate(session)?;
    }
    let mut selected: Vec<Session> = sessions
        .iter()
        .filter(|s| period.is_none_or(|p| p.contains(s.started_at.date_naive())))
        .cloned()
        .collect();
    selected.sort_by(|a, b| {
        a.started_at
            .cmp(&b.started_at)
            .then_with(|| a.session_id.cmp(&b.session_id))
    });
    let locales: HashMap<&DyadId, &Locale> = profiles
        .iter()
        .map(|p| (&p.dyad_id, &p.locale_pair.target))
        .collect();
    let fallback_locale = Locale::new("und");

    let mut dyad_ids: BTreeSet<DyadId> = profiles.iter().map(|p| p.dyad_id.clone()).collect();
    dyad_ids.extend(selected.iter().map(|s| s.dyad_id.clone()));

    let mut report = UsageReport {
        period,
        total_sessions: selected.len(),
        ..Default::default()
    };

    for dyad_id in &dyad_ids {
        let mine: Vec<&Session> = selected.iter().filter(|s| &s.dyad_id == dyad_id).collect();
        let locale = locales.get(dyad_id).copied().unwrap_or(&fallback_locale);
        let mut usage = DyadUsage {
            dyad_id: dyad_id.clone(),
            sessions: mine.len(),
            ..Default::default()
        };
        let mut child = ChildCardUsage {
            dyad_id: dyad_id.clone(),
            ..Default::default()
        };
        let mut unique: BTreeMap<CardCategory, BTreeSet<String>> = BTreeMap::new();
        let (mut session_secs, mut ended) = (0.0, 0usize);
        let (mut parent_secs, mut child_secs, mut child_turns) = (0.0, 0.0, 0usize);
        let (mut syllables, mut words) = (0usize, 0usize);
        for session in &mine {
            *usage
                .sessions_per_day
                .entry(session.started_at.date_naive())
                .or_default() += 1;
            *usage.topics.entry(session.topic.kind).or_default() += 1;
            usage.total_exchanges += session.exchanges();
            if let Some(secs) = session.duration_secs() {
                session_secs += secs as f64;
                ended += 1;
            }
            for message in &session.history {
                match message.speaker {
                    Speaker::Parent => {
                        let text = message.parent_text.as_deref().unwrap_or_default();
                        usage.parent_turns += 1;
                        parent_secs += turn_secs(message);
                        syllables += syllable_count(text, locale);
                        words += word_count(text);
                    }
                    Speaker::Child => {
                        child_turns += 1;
                        child_secs += turn_secs(message);
                        for card in message.child_cards.as_deref().unwrap_or_default() {
                            child.counts.bump(card.category, 1);
                            unique
                                .entry(card.category)
                                .or_default()
                                .insert(card.label_canonical.clone());
                            if card.category == CardCategory::Core {
                                *child
                                    .core_breakdown
                                    .entry(card.label_canonical.clone())
                                    .or_default() += 1;
                            }
                        }
                    }
                }
            }
        }
        for (category, labels) in &unique {
            child.unique_labels.bump(*category, labels.len());
        }
        usage.mean_exchanges = mean(usage.total_exchanges as f64, usage.sessions);
        usage.mean_session_secs = mean(session_secs, ended);
        usage.mean_parent_turn_secs = mean(parent_secs, usage.parent_turns);
        usage.mean_child_turn_secs = mean(child_secs, child_turns);
        usage.mean_parent_syllables = mean(syllables as f64, usage.parent_turns);
        usage.mean_parent_words = mean(words as f64, usage.parent_turns);
        report.category_totals.add(&child.counts);
        report.dyads.push(usage);
        report.children.push(child);
    }
    report.total_cards = report.category_totals.total();

    let max_turn = selected
        .iter()
        .map(|s| s.deck_records.len())
        .max()
        .unwrap_or(0);
    for turn in 1..=max_turn {
        match top_k_overlap(&selected, turn, overlap) {
            Ok(value) => report.overlap.push(value),
            Err(AnalyticsError::InsufficientData { .. }) => report.overlap_skipped.push(turn),
            Err(e) => return Err(e),
        }
    }

    let mut guides = GuideStats::default();
    for session in &selected {
        for record in &session.guide_records {
            for guide in &record.guides {
                guides.guides_shown += 1;
                *guides
                    .per_direction
                    .entry(guide.direction.name().to_string())
                    .or_default() += 1;
                guides.reveals += usize::from(guide.revealed);
            }
            if let Some(feedback) = &record.feedback {
                *guides
                    .feedback_per_category
                    .entry(format!("{:?}", feedback.category))
                    .or_default() += 1;
            }
        }
    }
    let in_scope: BTreeSet<&SessionId> = selected.iter().map(|s| &s.session_id).collect();
    let relevant: Vec<&Annotation> = annotations
        .iter()
        .filter(|a| in_scope.contains(&a.session_id))
        .collect();
    if !relevant.is_empty() {
        let adopted = relevant.iter().filter(|a| a.adopted).count();
        guides.adoption = Some(AdoptionStats {
            annotated: relevant.len(),
            adopted,
            rate: adopted as f64 / relevant.len() as f64,
        });
    }
    report.guides = guides;
    Ok(report)
}

/// Human-readable rendering of a report.
pub fn render_summary(report: &UsageReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Usage report");
    if let Some(p) = report.period {
        let _ = writeln!(out, "Period: {} to {}", p.from, p.to);
    }
    let _ = writeln!(out, "Sessions: {}", report.total_sessions);
    let c = &report.category_totals;
    let _ = writeln!(
        out,
        "Cards used: {} (Topic {}, Action {}, Emotion {}, Core {})",
        report.total_cards, c.topic, c.action, c.emotion, c.core
    );
    for dyad in &report.dyads {
        let _ = writeln!(
            out,
            "Dyad {}: {} sessions, {:.2} exchanges/session, {:.1}s/session, parent turn {:.1}s, child turn {:.1}s, {:.2} syllables/parent turn",
            dyad.dyad_id,
            dyad.sessions,
            dyad.mean_exchanges,
            dyad.mean_session_secs,
            dyad.mean_parent_turn_secs,
            dyad.mean_child_turn_secs,
            dyad.mean_parent_syllables
        );
    }
    for child in &report.children {
        let c = &child.counts;
        let _ = writeln!(
            out,
            "Child {}: Topic {} Action {} Emotion {} Core {} Total {}",
            child.dyad_id,
            c.topic,
            c.action,
            c.emotion,
            c.core,
            c.total()
        );
    }
    for o in &report.overlap {
        let _ = writeln!(
            out,
            "Top-label overlap at child turn {}: {:.3} across {} children",
            o.turn_index, o.value, o.children
        );
    }
    let g = &report.guides;
    let _ = writeln!(
        out,
        "Guides shown: {}, revealed: {}",
        g.guides_shown, g.reveals
    );
    for (direction, n) in &g.per_direction {
        let _ = writeln!(out, "  {direction}: {n}");
    }
    for (category, n) in &g.feedback_per_category {
        let _ = writeln!(out, "Feedback {category}: {n}");
    }
    if let Some(a) = &g.adoption {
        let _ = writeln!(
            out,
            "Guide adoption: {}/{} ({:.1}%)",
            a.adopted,
            a.annotated,
            a.rate * 100.0
        );
    }
    out
}

/// Transcript of one dyad's sessions started on `date` (UTC), oldest first.
pub fn export_daily_transcript(sessions: &[Session], dyad_id: &DyadId, date: NaiveDate) -> String {
    let mut day: Vec<&Session> = sessions
        .iter()
        .filter(|s| &s.dyad_id == dyad_id && s.started_at.date_naive() == date)
        .collect();
    day.sort_by(|a, b| {
        a.started_at
            .cmp(&b.started_at)
            .then_with(|| a.session_id.cmp(&b.session_id))
    });
    let mut out = format!("Conversation log for {dyad_id} on {date}\n");
    for session in day {
        let _ = writeln!(
            out,
            "\n== Session {} | {} | {} ==",
            session.session_id,
            session.topic,
            session.started_at.format("%H:%M:%S")
        );
        for message in &session.history {
            let line = match message.speaker {
                Speaker::Parent => message.parent_text.clone().unwrap_or_default(),
                Speaker::Child => message
                    .child_cards
                    .as_deref()
                    .unwrap_or_default()
                    .iter()
                    .map(|c| format!("[{}]", c.label_localized))
                    .collect(),
            };
            let tag = match message.speaker {
                Speaker::Parent => "P:",
                Speaker::Child => "C:",
            };
            if line.is_empty() {
                let _ = writeln!(out, "{tag}");
            } else {
                let _ = writeln!(out, "{tag} {line}");
            }
        }
    }
    out
}
