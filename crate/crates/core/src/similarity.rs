//! Named collections of embedded text entries with exact cosine top-k
//! retrieval.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::provider::{Embedder, EmbeddingVector, ProviderError};

pub const EXAMPLE_TRANSLATIONS: &str = "example-translations";
pub const LABEL_TRANSLATIONS: &str = "label-translations";
pub const SYMBOL_CAPTIONS: &str = "symbol-captions";

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("key text is empty")]
    EmptyInput,
    #[error("dimension mismatch: collection uses {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("zero-norm vector")]
    ZeroVector,
    #[error("unknown collection {0:?}")]
    UnknownCollection(String),
    #[error("entry {0:?} already exists")]
    DuplicateEntry(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Cosine similarity of two equal-length, non-zero vectors.
pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, SimilarityError> {
    if u.dimension() != v.dimension() {
        return Err(SimilarityError::DimensionMismatch {
            expected: u.dimension(),
            found: v.dimension(),
        });
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.values.iter().zip(&v.values) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(SimilarityError::ZeroVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub entry_id: String,
    pub key_text: String,
    pub payload: Value,
    pub embedding: EmbeddingVector,
    pub inserted_seq: u64,
}

/// Line-delimited interchange record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntryRecord {
    pub entry_id: String,
    pub key_text: String,
    #[serde(default)]
    pub payload: Value,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolRecord {
    pub symbol_id: String,
    pub label: String,
    pub caption: String,
    pub image_path: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredEntry {
    pub entry: Entry,
    pub score: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ExemplarCollection {
    pub name: String,
    dimension: Option<usize>,
    entries: Vec<Entry>,
    ids: HashSet<String>,
    next_seq: u64,
}

impl ExemplarCollection {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn dimension(&self) -> Option<usize> {
        self.dimension
    }

    fn insert(
        &mut self,
        entry_id: String,
        key_text: String,
        payload: Value,
        embedding: EmbeddingVector,
    ) -> Result<&Entry, SimilarityError> {
        if let Some(expected) = self.dimension {
            if expected != embedding.dimension() {
                return Err(SimilarityError::DimensionMismatch {
                    expected,
                    found: embedding.dimension(),
                });
            }
        }
        if self.ids.contains(&entry_id) {
            return Err(SimilarityError::DuplicateEntry(entry_id));
        }
        self.dimension = Some(embedding.dimension());
        self.ids.insert(entry_id.clone());
        self.entries.push(Entry {
            entry_id,
            key_text,
            payload,
            embedding,
            inserted_seq: self.next_seq,
        });
        self.next_seq += 1;
        Ok(self.entries.last().expect("just pushed"))
    }

    /// Exact scan: score descending, then insertion order ascending.
    pub fn top_k(
        &self,
        query: &EmbeddingVector,
        k: usize,
    ) -> Result<Vec<ScoredEntry>, SimilarityError> {
        if k == 0 {
            return Err(SimilarityError::InvalidK);
        }
        let mut scored = self
            .entries
            .iter()
            .map(|e| cosine(query, &e.embedding).map(|s| (s, e)))
            .collect::<Result<Vec<_>, _>>()?;
        scored.sort_by(|(sa, ea), (sb, eb)| {
            sb.total_cmp(sa)
                .then_with(|| ea.inserted_seq.cmp(&eb.inserted_seq))
        });
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(score, entry)| ScoredEntry {
                entry: entry.clone(),
                score,
            })
            .collect())
    }
}

/// Thread-safe registry of collections backed by one embedder.
pub struct SimilarityStore {
    embedder: Arc<dyn Embedder>,
    collections: RwLock<BTreeMap<String, Arc<RwLock<ExemplarCollection>>>>,
    persist_dir: Option<PathBuf>,
}

impl SimilarityStore {
    pub fn new(embedder: Arc<dyn Embedder>) -> Self {
        Self {
            embedder,
            collections: RwLock::new(BTreeMap::new()),
            persist_dir: None,
        }
    }

    /// Store that appends every insert to `<dir>/<collection>.jsonl` and
    /// starts from whatever those files already hold.
    pub fn persistent(embedder: Arc<dyn Embedder>, dir: &Path) -> Result<Self, SimilarityError> {
        fs::create_dir_all(dir)?;
        let store = Self {
            embedder,
            collections: RwLock::new(BTreeMap::new()),
            persist_dir: None,
        };
        let mut paths: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for path in paths {
            let name = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            store.import_jsonl(&name, File::open(&path)?)?;
        }
        Ok(Self {
            persist_dir: Some(dir.to_path_buf()),
            ..store
        })
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    fn collection(&self, name: &str) -> Option<Arc<RwLock<ExemplarCollection>>> {
        self.collections.read().get(name).cloned()
    }

    fn collection_or_create(&self, name: &str) -> Arc<RwLock<ExemplarCollection>> {
        if let Some(c) = self.collection(name) {
            return c;
        }
        self.collections
            .write()
            .entry(name.to_string())
            .or_insert_with(|| Arc::new(RwLock::new(ExemplarCollection::new(name))))
            .clone()
    }

    pub fn collection_names(&self) -> Vec<String> {
        self.collections.read().keys().cloned().collect()
    }

    pub fn len(&self, name: &str) -> usize {
        self.collection(name).map_or(0, |c| c.read().len())
    }

    /// Consistent copy of a collection.
    pub fn snapshot(&self, name: &str) -> Result<ExemplarCollection, SimilarityError> {
        self.collection(name)
            .map(|c| c.read().clone())
            .ok_or_else(|| SimilarityError::UnknownCollection(name.to_string()))
    }

    pub fn add_entry(
        &self,
        collection: &str,
        key_text: &str,
        payload: Value,
    ) -> Result<String, SimilarityError> {
        self.add_entry_with_id(collection, None, key_text, payload)
    }

    pub fn add_entry_with_id(
        &self,
        collection: &str,
        entry_id: Option<String>,
        key_text: &str,
        payload: Value,
    ) -> Result<String, SimilarityError> {
        if key_text.trim().is_empty() {
            return Err(SimilarityError::EmptyInput);
        }
        let embedding = self.embedder.embed(key_text)?;
        let handle = self.collection_or_create(collection);
        let mut guard = handle.write();
        let id = entry_id.unwrap_or_else(|| format!("{collection}-{}", guard.next_seq));
        let entry = guard.insert(id, key_text.to_string(), payload, embedding)?;
        self.persist(collection, entry)?;
        Ok(entry.entry_id.clone())
    }

    fn persist(&self, collection: &str, entry: &Entry) -> Result<(), SimilarityError> {
        let Some(dir) = &self.persist_dir else {
            return Ok(());
        };
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join(format!("{collection}.jsonl")))?;
        let line = serde_json::to_string(&to_record(entry)).expect("entry serializes");
        writeln!(file, "{line}")?;
        Ok(())
    }

    pub fn top_k(
        &self,
        collection: &str,
        query: &str,
        k: usize,
    ) -> Result<Vec<ScoredEntry>, SimilarityError> {
        let handle = self
            .collection(collection)
            .ok_or_else(|| SimilarityError::UnknownCollection(collection.to_string()))?;
        if k == 0 {
            return Err(SimilarityError::InvalidK);
        }
        let query = self.embedder.embed(query)?;
        let guard = handle.read();
        guard.top_k(&query, k)
    }

    /// Loads line-delimited [`EntryRecord`]s, keeping stored embeddings.
    pub fn import_jsonl(
        &self,
        collection: &str,
        reader: impl Read,
    ) -> Result<usize, SimilarityError> {
        let handle = self.collection_or_create(collection);
        let mut guard = handle.write();
        let mut count = 0;
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: EntryRecord =
                serde_json::from_str(&line).map_err(|e| SimilarityError::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            let entry = guard.insert(
                record.entry_id,
                record.key_text,
                record.payload,
                EmbeddingVector::new(record.embedding),
            )?;
            self.persist(collection, entry)?;
            count += 1;
        }
        Ok(count)
    }

    pub fn export_jsonl(
        &self,
        collection: &str,
        writer: impl Write,
    ) -> Result<usize, SimilarityError> {
        let snapshot = self.snapshot(collection)?;
        let mut writer = BufWriter::new(writer);
        for entry in snapshot.entries() {
            let line = serde_json::to_string(&to_record(entry)).expect("entry serializes");
            writeln!(writer, "{line}")?;
        }
        writer.flush()?;
        Ok(snapshot.len())
    }

    /// Loads `{symbol_id, label, caption, image_path}` records, embedding
    /// the caption.
    pub fn import_symbols(&self, reader: impl Read) -> Result<usize, SimilarityError> {
        let mut count = 0;
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: SymbolRecord =
                serde_json::from_str(&line).map_err(|e| SimilarityError::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            let payload = serde_json::to_value(&record).expect("record serializes");
            self.add_entry_with_id(
                SYMBOL_CAPTIONS,
                Some(record.symbol_id.clone()),
                &record.caption,
                payload,
            )?;
            count += 1;
        }
        Ok(count)
    }

    /// Recomputes every embedding of `collection` with the current embedder,
    /// keeping ids, payloads and insertion order. Rewrites the persisted file.
    pub fn reembed(&self, collection: &str) -> Result<usize, SimilarityError> {
        let handle = self
            .collection(collection)
            .ok_or_else(|| SimilarityError::UnknownCollection(collection.to_string()))?;
        let mut guard = handle.write();
        let mut rebuilt = ExemplarCollection::new(collection);
        for entry in guard.entries() {
            let embedding = self.embedder.embed(&entry.key_text)?;
            rebuilt.insert(
                entry.entry_id.clone(),
                entry.key_text.clone(),
                entry.payload.clone(),
                embedding,
            )?;
        }
        if let Some(dir) = &self.persist_dir {
            let path = dir.join(format!("{collection}.jsonl"));
            let tmp = dir.join(format!("{collection}.jsonl.tmp"));
            let mut writer = BufWriter::new(File::create(&tmp)?);
            for entry in rebuilt.entries() {
                writeln!(
                    writer,
                    "{}",
                    serde_json::to_string(&to_record(entry)).expect("entry serializes")
                )?;
            }
            writer.flush()?;
            drop(writer);
            fs::rename(tmp, path)?;
        }
        let count = rebuilt.len();
        *guard = rebuilt;
        Ok(count)
    }
}

fn to_record(entry: &Entry) -> EntryRecord {
    EntryRecord {
        entry_id: entry.entry_id.clone(),
        key_text: entry.key_text.clone(),
        payload: entry.payload.clone(),
        embedding: entry.embedding.values.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::mock::TrigramEmbedder;
    use serde_json::json;

    fn store() -> SimilarityStore {
        SimilarityStore::new(Arc::new(TrigramEmbedder::new()))
    }

    #[test]
    fn cosine_reference_values() {
        let u = EmbeddingVector::new(vec![1.0, 2.0, 3.0]);
        let v = EmbeddingVector::new(vec![4.0, 5.0, 6.0]);
        let expected = 32.0 / (14f64.sqrt() * 77f64.sqrt());
        assert!((cosine(&u, &v).unwrap() - expected).abs() < 1e-12);
        assert!((cosine(&u, &v).unwrap() - 0.974_631_846).abs() < 1e-9);
        assert!((cosine(&u, &u).unwrap() - 1.0).abs() < 1e-12);
        let x = EmbeddingVector::new(vec![1.0, 0.0]);
        let y = EmbeddingVector::new(vec![0.0, 1.0]);
        assert_eq!(cosine(&x, &y).unwrap(), 0.0);
        assert!(matches!(
            cosine(&x, &u),
            Err(SimilarityError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            cosine(&x, &EmbeddingVector::new(vec![0.0, 0.0])),
            Err(SimilarityError::ZeroVector)
        ));
    }

    #[test]
    fn top_k_rules() {
        let s = store();
        for text in [
            "red fire truck with ladder",
            "yellow banana fruit",
            "city bus at bus stop",
        ] {
            s.add_entry("captions", text, json!(null)).unwrap();
        }
        let best = s.top_k("captions", "fire truck", 1).unwrap();
        assert_eq!(best.len(), 1);
        assert_eq!(best[0].entry.key_text, "red fire truck with ladder");

        let all = s.top_k("captions", "fire truck", 10).unwrap();
        assert_eq!(all.len(), 3);
        assert!(all.windows(2).all(|w| w[0].score >= w[1].score));
        assert!(all.iter().all(|e| (-1.0..=1.0).contains(&e.score)));

        assert!(matches!(
            s.top_k("nope", "x", 1),
            Err(SimilarityError::UnknownCollection(_))
        ));
        assert!(matches!(
            s.add_entry("captions", " ", json!(null)),
            Err(SimilarityError::EmptyInput)
        ));
    }

    #[test]
    fn ties_prefer_earlier_inserts() {
        let s = store();
        let first = s.add_entry("c", "train", json!(1)).unwrap();
        let _second = s.add_entry("c", "train", json!(2)).unwrap();
        let best = s.top_k("c", "train", 1).unwrap();
        assert_eq!(best[0].entry.entry_id, first);
    }

    #[test]
    fn dimension_mismatch_on_import() {
        let s = store();
        s.add_entry("c", "train", json!(null)).unwrap();
        let line = r#"{"entry_id":"x","key_text":"bus","payload":null,"embedding":[1.0,0.0]}"#;
        assert!(matches!(
            s.import_jsonl("c", line.as_bytes()),
            Err(SimilarityError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn persisted_collections_reload_identically() {
        let dir = tempfile::tempdir().unwrap();
        let embedder: Arc<dyn Embedder> = Arc::new(TrigramEmbedder::new());
        let before = {
            let s = SimilarityStore::persistent(embedder.clone(), dir.path()).unwrap();
            for text in ["grandma house", "grand piano", "bus stop", "house party"] {
                s.add_entry("c", text, json!({ "t": text })).unwrap();
            }
            s.top_k("c", "grandma", 4).unwrap()
        };
        let s = SimilarityStore::persistent(embedder, dir.path()).unwrap();
        assert_eq!(s.len("c"), 4);
        assert_eq!(s.top_k("c", "grandma", 4).unwrap(), before);
        assert_eq!(s.reembed("c").unwrap(), 4);
        let s = SimilarityStore::persistent(Arc::new(TrigramEmbedder::new()), dir.path()).unwrap();
        assert_eq!(s.len("c"), 4);
    }

    #[test]
    fn symbol_import() {
        let s = store();
        let data = concat!(
            r#"{"symbol_id":"s1","label":"fire truck","caption":"red fire truck with ladder","image_path":"s1.png"}"#,
            "\n",
            r#"{"symbol_id":"s2","label":"banana","caption":"yellow banana fruit","image_path":"s2.png"}"#,
            "\n"
        );
        assert_eq!(s.import_symbols(data.as_bytes()).unwrap(), 2);
        let hit = s.top_k(SYMBOL_CAPTIONS, "fire truck", 1).unwrap();
        assert_eq!(hit[0].entry.entry_id, "s1");
        assert_eq!(hit[0].entry.payload["image_path"], "s1.png");
    }
}
