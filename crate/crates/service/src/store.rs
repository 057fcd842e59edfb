//! Append-only per-session event logs.
//!
//! Each session lives in its own directory holding `events.jsonl` and
//! `session.json`. An operation's events are written as one batch whose last
//! line carries `"commit": true`, then synced. On load, a torn final line or
//! a trailing batch without its commit line is discarded and cut from the
//! file, so a crash mid-write leaves the session at its previous operation.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use cpe_core::backend::BackendKind;
use cpe_core::SessionEvent;
use serde::{Deserialize, Serialize};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const RECORD_FILE: &str = "session.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub seq: u64,
    pub session_id: String,
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub commit: bool,
    pub event: SessionEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Ended,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub created_at: DateTime<Utc>,
    pub status: SessionStatus,
    pub chat_backend: BackendKind,
    pub target_backend: BackendKind,
    pub chat_model: String,
    pub target_model: String,
    pub template: String,
    pub selection_seed: Option<u64>,
    pub evaluation_seed: Option<u64>,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("invalid session id `{0}`")]
    InvalidId(String),
    #[error("no session `{0}`")]
    NotFound(String),
    #[error("session `{0}` already exists")]
    AlreadyExists(String),
    #[error("corrupt event log for `{session_id}` at seq {seq}: {detail}")]
    CorruptLog { session_id: String, seq: u64, detail: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Result of reading a log back.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded {
    pub events: Vec<SessionEvent>,
    /// Events dropped because their batch never committed.
    pub discarded: usize,
    /// Whether the file was cut back to its committed prefix.
    pub repaired: bool,
}

#[derive(Debug, Clone)]
pub struct EventStore {
    root: PathBuf,
}

pub fn valid_session_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

impl EventStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn session_dir(&self, id: &str) -> Result<PathBuf, StoreError> {
        if !valid_session_id(id) {
            return Err(StoreError::InvalidId(id.to_string()));
        }
        Ok(self.root.join(id))
    }

    pub fn events_path(&self, id: &str) -> Result<PathBuf, StoreError> {
        Ok(self.session_dir(id)?.join(EVENTS_FILE))
    }

    pub fn exists(&self, id: &str) -> bool {
        self.events_path(id).map(|p| p.exists()).unwrap_or(false)
    }

    /// Creates the session directory and writes its record.
    pub fn create(&self, record: &SessionRecord) -> Result<(), StoreError> {
        let dir = self.session_dir(&record.session_id)?;
        if dir.exists() {
            return Err(StoreError::AlreadyExists(record.session_id.clone()));
        }
        fs::create_dir_all(&dir)?;
        File::create(dir.join(EVENTS_FILE))?.sync_all()?;
        self.write_record(record)
    }

    pub fn write_record(&self, record: &SessionRecord) -> Result<(), StoreError> {
        let dir = self.session_dir(&record.session_id)?;
        let tmp = dir.join(format!("{RECORD_FILE}.tmp"));
        let mut f = File::create(&tmp)?;
        serde_json::to_writer_pretty(&mut f, record)?;
        f.write_all(b"\n")?;
        f.sync_all()?;
        fs::rename(tmp, dir.join(RECORD_FILE))?;
        Ok(())
    }

    pub fn read_record(&self, id: &str) -> Result<SessionRecord, StoreError> {
        let path = self.session_dir(id)?.join(RECORD_FILE);
        let bytes = fs::read(&path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => StoreError::NotFound(id.to_string()),
            _ => e.into(),
        })?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Appends one committed batch. `first_seq` is the seq of `events[0]`.
    pub fn append_batch(&self, id: &str, first_seq: u64, events: &[SessionEvent]) -> Result<(), StoreError> {
        if events.is_empty() {
            return Ok(());
        }
        let path = self.events_path(id)?;
        let mut buf = Vec::new();
        let timestamp = Utc::now();
        for (i, event) in events.iter().enumerate() {
            let envelope = Envelope {
                seq: first_seq + i as u64,
                session_id: id.to_string(),
                timestamp,
                commit: i + 1 == events.len(),
                event: event.clone(),
            };
            serde_json::to_writer(&mut buf, &envelope)?;
            buf.push(b'\n');
        }
        let mut f = OpenOptions::new().append(true).open(&path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => StoreError::NotFound(id.to_string()),
            _ => e.into(),
        })?;
        f.write_all(&buf)?;
        f.sync_data()?;
        Ok(())
    }

    /// Reads the committed events, cutting any uncommitted tail from the file.
    pub fn load(&self, id: &str) -> Result<Loaded, StoreError> {
        let path = self.events_path(id)?;
        let bytes = fs::read(&path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => StoreError::NotFound(id.to_string()),
            _ => e.into(),
        })?;

        let mut events = Vec::new();
        let mut committed_events = 0;
        let mut committed_bytes = 0;
        let mut offset = 0;
        while offset < bytes.len() {
            let expected = events.len() as u64 + 1;
            let (line, next, complete) = match bytes[offset..].iter().position(|&b| b == b'\n') {
                Some(n) => (&bytes[offset..offset + n], offset + n + 1, true),
                None => (&bytes[offset..], bytes.len(), false),
            };
            let envelope: Envelope = match serde_json::from_slice(line) {
                Ok(e) => e,
                Err(_) if !complete => break,
                Err(e) => {
                    return Err(StoreError::CorruptLog {
                        session_id: id.to_string(),
                        seq: expected,
                        detail: e.to_string(),
                    })
                }
            };
            if envelope.seq != expected {
                return Err(StoreError::CorruptLog {
                    session_id: id.to_string(),
                    seq: expected,
                    detail: format!("found seq {}", envelope.seq),
                });
            }
            if envelope.session_id != id {
                return Err(StoreError::CorruptLog {
                    session_id: id.to_string(),
                    seq: expected,
                    detail: format!("event belongs to session `{}`", envelope.session_id),
                });
            }
            events.push(envelope.event);
            if envelope.commit && complete {
                committed_events = events.len();
                committed_bytes = next;
            }
            offset = next;
        }

        let discarded = events.len() - committed_events;
        events.truncate(committed_events);
        let repaired = committed_bytes < bytes.len();
        if repaired {
            let f = OpenOptions::new().write(true).open(&path)?;
            f.set_len(committed_bytes as u64)?;
            f.sync_all()?;
        }
        Ok(Loaded { events, discarded, repaired })
    }

    /// Ids of all stored sessions.
    pub fn list(&self) -> Result<Vec<String>, StoreError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let entry = entry?;
            if let Some(name) = entry.file_name().to_str() {
                if valid_session_id(name) && entry.path().join(EVENTS_FILE).exists() {
                    ids.push(name.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }
}
