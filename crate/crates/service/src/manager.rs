//! Session lifecycle: creation, per-session locking, persistence after every
//! operation, lazy replay from disk and idle expiry.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard, TryLockError};
use std::time::{Duration, Instant};

use chrono::Utc;
use cpe_core::backend::BackendError;
use cpe_core::evalsuite::{BlindItem, EvalError, EvalOpError, RankTally, SurveyResponse};
use cpe_core::ingest::{example_preview, DataFormat, IngestError, SourceInfo};
use cpe_core::orchestrator::{ApplyError, VisibleMessage};
use cpe_core::templates::TemplateSet;
use cpe_core::{Runtime, Session, SessionConfig, SessionError, Stage};
use serde::{Deserialize, Serialize};

use crate::backends::make_backend;
use crate::decode::load_user_data;
use crate::store::{EventStore, SessionRecord, SessionStatus, StoreError};

pub const DEFAULT_IDLE_EXPIRY: Duration = Duration::from_secs(24 * 60 * 60);
pub const PREVIEW_CHARS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BusyPolicy {
    /// A request to a session that is already busy fails with `Busy`.
    #[default]
    Reject,
    /// Requests to the same session wait their turn.
    Queue,
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("no session `{0}`")]
    NotFound(String),
    #[error("session `{0}` is busy with another request")]
    Busy(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("stored events for `{session_id}` do not replay at event {index}: {source}")]
    Replay { session_id: String, index: usize, source: ApplyError },
}

impl From<EvalOpError> for ServiceError {
    fn from(e: EvalOpError) -> Self {
        match e {
            EvalOpError::Eval(e) => ServiceError::Eval(e),
            EvalOpError::Session(e) => ServiceError::Session(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSummary {
    pub source: SourceInfo,
    pub chat_count: usize,
    pub eval_count: usize,
    pub selection_seed: u64,
    pub previews: Vec<String>,
    pub messages: Vec<VisibleMessage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatView {
    pub session_id: String,
    pub stage: String,
    pub ended: bool,
    pub messages: Vec<VisibleMessage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub items: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    Fs,
    Zs,
}

#[derive(Debug, Clone)]
pub struct ManagerConfig {
    pub idle_expiry: Duration,
    pub busy: BusyPolicy,
}

impl Default for ManagerConfig {
    fn default() -> Self {
        Self { idle_expiry: DEFAULT_IDLE_EXPIRY, busy: BusyPolicy::Reject }
    }
}

struct Slot {
    session: Session,
    record: SessionRecord,
    /// Number of log events already on disk.
    persisted: usize,
    last_used: Instant,
}

pub struct SessionManager {
    store: EventStore,
    templates: TemplateSet,
    config: ManagerConfig,
    slots: Mutex<HashMap<String, Arc<Mutex<Slot>>>>,
}

fn status_of(session: &Session) -> SessionStatus {
    if session.stage() == Stage::Ended {
        SessionStatus::Ended
    } else {
        SessionStatus::Active
    }
}

impl SessionManager {
    pub fn new(store: EventStore, templates: TemplateSet, config: ManagerConfig) -> Self {
        Self { store, templates, config, slots: Mutex::new(HashMap::new()) }
    }

    pub fn store(&self) -> &EventStore {
        &self.store
    }

    fn slots(&self) -> MutexGuard<'_, HashMap<String, Arc<Mutex<Slot>>>> {
        self.slots.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn create_session(&self, config: SessionConfig) -> Result<String, ServiceError> {
        config.chat.validate()?;
        config.target.validate()?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let record = SessionRecord {
            session_id: id.clone(),
            created_at: Utc::now(),
            status: SessionStatus::Active,
            chat_backend: config.chat.kind(),
            target_backend: config.target.kind(),
            chat_model: config.chat.model_id().to_string(),
            target_model: config.target.model_id().to_string(),
            template: config.template.name.clone(),
            selection_seed: None,
            evaluation_seed: None,
        };
        let session = Session::create(id.clone(), config);
        self.store.create(&record)?;
        self.store.append_batch(&id, 1, session.log())?;
        let slot = Slot { persisted: session.log().len(), session, record, last_used: Instant::now() };
        self.slots().insert(id.clone(), Arc::new(Mutex::new(slot)));
        tracing::info!(session = %id, "session created");
        Ok(id)
    }

    /// The slot for `id`, replaying it from disk if it is not in memory.
    fn slot(&self, id: &str) -> Result<Arc<Mutex<Slot>>, ServiceError> {
        if let Some(slot) = self.slots().get(id) {
            return Ok(slot.clone());
        }
        if !self.store.exists(id) {
            return Err(ServiceError::NotFound(id.to_string()));
        }
        let loaded = self.store.load(id)?;
        if loaded.repaired {
            tracing::warn!(session = %id, discarded = loaded.discarded, "dropped uncommitted events");
        }
        let session = Session::replay(loaded.events).map_err(|(index, source)| ServiceError::Replay {
            session_id: id.to_string(),
            index,
            source,
        })?;
        let record = self.store.read_record(id)?;
        let slot = Slot { persisted: session.log().len(), session, record, last_used: Instant::now() };
        let mut slots = self.slots();
        Ok(slots.entry(id.to_string()).or_insert_with(|| Arc::new(Mutex::new(slot))).clone())
    }

    /// Runs `op` with exclusive access to the session and persists whatever
    /// events it produced before returning.
    fn with_session<T>(
        &self,
        id: &str,
        op: impl FnOnce(&mut Session, &TemplateSet) -> Result<T, ServiceError>,
    ) -> Result<T, ServiceError> {
        let slot = self.slot(id)?;
        let mut guard = match self.config.busy {
            BusyPolicy::Queue => slot.lock().unwrap_or_else(|e| e.into_inner()),
            BusyPolicy::Reject => match slot.try_lock() {
                Ok(g) => g,
                Err(TryLockError::WouldBlock) => return Err(ServiceError::Busy(id.to_string())),
                Err(TryLockError::Poisoned(e)) => e.into_inner(),
            },
        };
        guard.last_used = Instant::now();
        let result = op(&mut guard.session, &self.templates);

        let persisted = guard.persisted;
        let fresh = &guard.session.log()[persisted..];
        if !fresh.is_empty() {
            if let Err(e) = self.store.append_batch(id, persisted as u64 + 1, fresh) {
                // Memory is ahead of disk now; reload from disk on next use.
                tracing::error!(session = %id, error = %e, "persisting events failed");
                drop(guard);
                self.slots().remove(id);
                return Err(e.into());
            }
            guard.persisted = guard.session.log().len();
        }
        self.refresh_record(&mut guard)?;
        result
    }

    /// Runs `op` with exclusive read access; nothing is persisted.
    fn read_session<T>(
        &self,
        id: &str,
        op: impl FnOnce(&Session) -> Result<T, ServiceError>,
    ) -> Result<T, ServiceError> {
        self.with_session(id, |s, _| op(s))
    }

    fn refresh_record(&self, slot: &mut Slot) -> Result<(), ServiceError> {
        let status = status_of(&slot.session);
        let selection_seed = slot.session.data().map(|d| d.selection_seed);
        let evaluation_seed = slot.session.evaluation().map(|e| e.seed);
        let r = &mut slot.record;
        if r.status != status || r.selection_seed != selection_seed || r.evaluation_seed != evaluation_seed {
            r.status = status;
            r.selection_seed = selection_seed;
            r.evaluation_seed = evaluation_seed;
            self.store.write_record(r)?;
        }
        Ok(())
    }

    pub fn upload_data(
        &self,
        id: &str,
        filename: &str,
        bytes: &[u8],
        format: Option<DataFormat>,
        seed: u64,
    ) -> Result<DataSummary, ServiceError> {
        let data = load_user_data(filename, bytes, format, seed)?;
        self.with_session(id, |session, templates| {
            let mut chat = make_backend(&session.config().chat, session.chat_completions())?;
            let mut target = make_backend(&session.config().target, session.target_completions())?;
            let mut rt = Runtime { chat: &mut *chat, target: &mut *target, templates };
            let summary_data = data.clone();
            let messages = session.start_session(data, &mut rt)?;
            Ok(DataSummary {
                source: summary_data.source.clone(),
                chat_count: summary_data.chat_examples.len(),
                eval_count: summary_data.eval_examples.len(),
                selection_seed: summary_data.selection_seed,
                previews: example_preview(&summary_data, PREVIEW_CHARS)?,
                messages,
            })
        })
    }

    pub fn post_message(&self, id: &str, text: &str) -> Result<Vec<VisibleMessage>, ServiceError> {
        self.with_session(id, |session, templates| {
            let mut chat = make_backend(&session.config().chat, session.chat_completions())?;
            let mut target = make_backend(&session.config().target, session.target_completions())?;
            let mut rt = Runtime { chat: &mut *chat, target: &mut *target, templates };
            Ok(session.post_user_message(text, &mut rt)?)
        })
    }

    pub fn chat(&self, id: &str) -> Result<ChatView, ServiceError> {
        self.read_session(id, |s| {
            Ok(ChatView {
                session_id: s.id().to_string(),
                stage: s.stage().to_string(),
                ended: s.stage() == Stage::Ended,
                messages: s.visible_transcript(),
            })
        })
    }

    /// The prompt file contents: exactly the few-shot or zero-shot rendering.
    pub fn prompt(&self, id: &str, kind: PromptKind) -> Result<String, ServiceError> {
        self.read_session(id, |s| {
            let prompts = s.finalize()?;
            Ok(match kind {
                PromptKind::Fs => prompts.fs_prompt,
                PromptKind::Zs => prompts.zs_prompt,
            })
        })
    }

    pub fn start_evaluation(&self, id: &str, seed: u64) -> Result<EvaluationSummary, ServiceError> {
        self.with_session(id, |session, templates| {
            let mut target = make_backend(&session.config().target, session.target_completions())?;
            let evaluation = session.build_evaluation(&mut *target, templates, seed)?;
            Ok(EvaluationSummary { items: evaluation.items.len(), skipped: evaluation.skipped.len() })
        })
    }

    pub fn evaluation_items(&self, id: &str) -> Result<Vec<BlindItem>, ServiceError> {
        self.read_session(id, |s| Ok(s.evaluation().ok_or(EvalError::NoEvaluation)?.blind_items()))
    }

    pub fn rank(&self, id: &str, item_id: u32, best: u8, worst: u8, overwrite: bool) -> Result<(), ServiceError> {
        self.with_session(id, |s, _| Ok(s.record_ranking(item_id, best, worst, overwrite)?))
    }

    pub fn results(&self, id: &str) -> Result<RankTally, ServiceError> {
        self.read_session(id, |s| Ok(s.rank_tally()?))
    }

    pub fn survey(&self, id: &str, response: SurveyResponse) -> Result<(), ServiceError> {
        self.with_session(id, |s, _| Ok(s.record_survey(response)?))
    }

    /// A copy of the session state.
    pub fn snapshot(&self, id: &str) -> Result<Session, ServiceError> {
        self.read_session(id, |s| Ok(s.clone()))
    }

    /// Drops sessions idle for longer than the configured expiry from memory.
    /// Their logs stay on disk and are replayed on next access.
    pub fn expire_idle(&self) -> usize {
        let expiry = self.config.idle_expiry;
        let mut slots = self.slots();
        let before = slots.len();
        slots.retain(|_, slot| match slot.try_lock() {
            Ok(s) => s.last_used.elapsed() < expiry,
            Err(_) => true,
        });
        before - slots.len()
    }

    /// Forgets every in-memory session, as a restart would.
    pub fn evict_all(&self) {
        self.slots().clear();
    }
}
