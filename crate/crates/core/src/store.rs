//! On-disk layout for a deployment:
//!
//! ```text
//! <root>/profiles/<dyad_id>.json
//! <root>/sessions/<session_id>.jsonl     append-only event log
//! <root>/assets/<asset_id>               content-addressed blobs
//! <root>/collections/<name>.jsonl        similarity collections
//! <root>/translation-memory.jsonl
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use parking_lot::Mutex;

use crate::domain::{is_safe_id, DyadProfile, SessionId};
use crate::provider::AssetSink;
use crate::session::{replay, Journal, Session, SessionEvent};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}, line {line}: {message}")]
    CorruptLog {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{0:?} is not a valid id")]
    InvalidId(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub struct FileStore {
    root: PathBuf,
    append_lock: Mutex<()>,
}

impl FileStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for dir in ["profiles", "sessions", "assets", "collections"] {
            let path = root.join(dir);
            fs::create_dir_all(&path).map_err(io_err(&path))?;
        }
        Ok(Self {
            root,
            append_lock: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn collections_dir(&self) -> PathBuf {
        self.root.join("collections")
    }

    pub fn memory_path(&self) -> PathBuf {
        self.root.join("translation-memory.jsonl")
    }

    fn checked(id: &str) -> Result<&str, StoreError> {
        if is_safe_id(id) {
            Ok(id)
        } else {
            Err(StoreError::InvalidId(id.to_string()))
        }
    }

    pub fn asset_path(&self, asset_id: &str) -> Result<PathBuf, StoreError> {
        Ok(self.root.join("assets").join(Self::checked(asset_id)?))
    }

    pub fn read_asset(&self, asset_id: &str) -> Result<Option<Vec<u8>>, StoreError> {
        let path = self.asset_path(asset_id)?;
        match fs::read(&path) {
            Ok(bytes) => Ok(Some(bytes)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    pub fn load_profiles(&self) -> Result<Vec<DyadProfile>, StoreError> {
        let mut profiles = Vec::new();
        for path in sorted_files(&self.root.join("profiles"), "json")? {
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let profile = serde_json::from_str(&text).map_err(|e| StoreError::CorruptLog {
                path: path.clone(),
                line: e.line(),
                message: e.to_string(),
            })?;
            profiles.push(profile);
        }
        Ok(profiles)
    }

    pub fn read_events(&self, session_id: &SessionId) -> Result<Vec<SessionEvent>, StoreError> {
        let path = self.session_path(session_id)?;
        read_event_file(&path)
    }

    fn session_path(&self, session_id: &SessionId) -> Result<PathBuf, StoreError> {
        let id = Self::checked(session_id.as_str())?;
        Ok(self.root.join("sessions").join(format!("{id}.jsonl")))
    }

    /// Replays every session log.
    pub fn load_sessions(&self) -> Result<Vec<Session>, StoreError> {
        let mut sessions = Vec::new();
        for path in sorted_files(&self.root.join("sessions"), "jsonl")? {
            let events = read_event_file(&path)?;
            let session = replay(&events).map_err(|e| StoreError::CorruptLog {
                path: path.clone(),
                line: events
                    .iter()
                    .position(|ev| ev.seq == e.seq)
                    .map_or(events.len(), |i| i + 1),
                message: e.message,
            })?;
            sessions.push(session);
        }
        Ok(sessions)
    }
}

fn sorted_files(dir: &Path, extension: &str) -> Result<Vec<PathBuf>, StoreError> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(extension) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn read_event_file(path: &Path) -> Result<Vec<SessionEvent>, StoreError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut events = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line).map_err(|e| StoreError::CorruptLog {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        events.push(event);
    }
    Ok(events)
}

fn to_io(e: StoreError) -> std::io::Error {
    match e {
        StoreError::Io { source, .. } => source,
        other => std::io::Error::new(std::io::ErrorKind::InvalidInput, other.to_string()),
    }
}

impl Journal for FileStore {
    fn append_event(&self, session_id: &SessionId, event: &SessionEvent) -> std::io::Result<()> {
        let path = self.session_path(session_id).map_err(to_io)?;
        let line = serde_json::to_string(event).map_err(std::io::Error::other)?;
        let _guard = self.append_lock.lock();
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        writeln!(file, "{line}")?;
        file.sync_data()
    }

    fn save_profile(&self, profile: &DyadProfile) -> std::io::Result<()> {
        let id = Self::checked(profile.dyad_id.as_str()).map_err(to_io)?;
        let dir = self.root.join("profiles");
        let tmp = dir.join(format!(".{id}.json.tmp"));
        let body = serde_json::to_vec_pretty(profile).map_err(std::io::Error::other)?;
        fs::write(&tmp, body)?;
        fs::rename(&tmp, dir.join(format!("{id}.json")))
    }
}

impl AssetSink for FileStore {
    fn put_asset(&self, asset_id: &str, bytes: &[u8]) -> std::io::Result<()> {
        let path = self.asset_path(asset_id).map_err(to_io)?;
        if path.exists() {
            return Ok(());
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, &path)
    }
}
