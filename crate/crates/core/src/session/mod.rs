//! Multi-round editing sessions.
//!
//! Each session is persisted as an append-only JSON-lines event log under
//! the sessions directory; artifacts live in the blob store. Replaying a log
//! rebuilds the session exactly. Messages to one session are serialized;
//! readers get immutable snapshots and never wait for a running edit.

mod log;
mod state;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use log::{replay_log, LogLine, SessionEvent};
pub use state::SessionState;

use crate::backend::ChatMessage;
use crate::engine::Engine;
use crate::imaging;
use crate::planner::{Category, Classified, EditTask, ExecutionReport, ProgressEvent};
use crate::store::{ContentHash, StoreError};
use log::LogWriter;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("session {0} not found")]
    NotFound(String),
    #[error("image rejected: {0}")]
    ImageRejected(String),
    #[error("session log {path} line {line}: {message}")]
    CorruptLog { path: String, line: usize, message: String },
    #[error("session log: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Author {
    User,
    Assistant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttachmentKind {
    /// Edited image.
    Image,
    /// Editing mask, 8-bit PNG.
    Mask,
    /// Mask plan record (JSON).
    MaskPlan,
    /// Generation job record (JSON).
    JobRecord,
    /// Cosegmentation manifest (JSON) of the task's input image.
    Cosegmentation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Attachment {
    pub kind: AttachmentKind,
    #[serde(rename = "ref")]
    pub hash: ContentHash,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_number: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Turn {
    pub index: usize,
    pub author: Author,
    pub text: String,
    pub attachments: Vec<Attachment>,
    /// RFC 3339, UTC.
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Session {
    pub id: String,
    pub created_at: String,
    pub state: SessionState,
    pub image_slots: BTreeMap<String, ContentHash>,
    pub turns: Vec<Turn>,
}

impl Session {
    fn blank() -> Self {
        Self {
            id: String::new(),
            created_at: String::new(),
            state: SessionState::AwaitingImage,
            image_slots: BTreeMap::new(),
            turns: Vec::new(),
        }
    }

    pub fn current_image(&self) -> Option<&ContentHash> {
        self.image_slots.get("current")
    }

    /// Every artifact reachable from the session.
    pub fn artifacts(&self) -> Vec<ContentHash> {
        let mut out: Vec<ContentHash> = self.image_slots.values().cloned().collect();
        out.extend(self.turns.iter().flat_map(|t| t.attachments.iter().map(|a| a.hash.clone())));
        out.sort();
        out.dedup();
        out
    }
}

/// Pushed to observers as a session changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum SessionUpdate {
    State { state: SessionState },
    Turn { turn: Turn },
    Slots { slots: BTreeMap<String, ContentHash> },
    Progress { progress: ProgressEvent },
}

pub type Observer = Arc<dyn Fn(&str, &SessionUpdate) + Send + Sync>;

const CAPABILITIES: &str = "I edit the clothing in your photo. Describe changes in plain words and I will \
split them into steps and run them one by one: replace an item (\"replace the vest with a white \
t-shirt\"), recolor it (\"make the pants navy blue\"), add an accessory (\"add a gold necklace\") or \
remove one (\"remove the hat\"). Each result comes with its editing mask, and you can keep refining \
the latest result with follow-up requests.";

const NEED_IMAGE: &str = "Please upload a photo of a person first (PNG or JPEG, at least 256 pixels on the shorter side).";

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn is_capability_question(text: &str) -> bool {
    let t = crate::text::clean(text);
    ["what can you", "what do you do", "help", "how do i", "how does this work", "what are you", "who are you"]
        .iter()
        .any(|p| t.contains(p))
}

struct Handle {
    /// Serializes operations on the session.
    op: Mutex<()>,
    log: Mutex<LogWriter>,
    snapshot: RwLock<Arc<Session>>,
}

pub struct SessionManager {
    engine: Arc<Engine>,
    dir: PathBuf,
    sessions: RwLock<HashMap<String, Arc<Handle>>>,
    observer: RwLock<Option<Observer>>,
}

impl SessionManager {
    /// Opens the sessions directory and replays every log in it. Sessions
    /// interrupted mid-edit are returned to `Ready` through `Failed`.
    pub fn open(engine: Arc<Engine>) -> Result<Self, SessionError> {
        let dir = engine.config().sessions_dir();
        fs::create_dir_all(&dir)?;
        let manager = Self {
            engine,
            dir,
            sessions: RwLock::new(HashMap::new()),
            observer: RwLock::new(None),
        };
        let mut paths: Vec<PathBuf> = fs::read_dir(&manager.dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for path in paths {
            let (session, seq) = replay_log(&path)?;
            let id = session.id.clone();
            let handle = Arc::new(Handle {
                op: Mutex::new(()),
                log: Mutex::new(LogWriter::open(&path, seq)?),
                snapshot: RwLock::new(Arc::new(session)),
            });
            manager.sessions.write().expect("session map poisoned").insert(id.clone(), handle.clone());
            if handle.snapshot().state.is_busy() {
                tracing::warn!(session = %id, "session was interrupted mid-edit");
                manager.fail_request(&id, &handle, "The previous request was interrupted before it finished.", Vec::new())?;
            }
        }
        Ok(manager)
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    pub fn set_observer(&self, observer: Observer) {
        *self.observer.write().expect("observer poisoned") = Some(observer);
    }

    fn notify(&self, id: &str, update: SessionUpdate) {
        let observer = self.observer.read().expect("observer poisoned").clone();
        if let Some(f) = observer {
            f(id, &update);
        }
    }

    fn handle(&self, id: &str) -> Result<Arc<Handle>, SessionError> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::NotFound(id.to_string()))
    }

    pub fn log_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.jsonl"))
    }

    pub fn list(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().expect("session map poisoned").keys().cloned().collect();
        ids.sort();
        ids
    }

    fn append(&self, id: &str, handle: &Handle, event: SessionEvent) -> Result<(), SessionError> {
        let mut log = handle.log.lock().expect("session log poisoned");
        let mut next = (*handle.snapshot()).clone();
        if let Err(message) = next.apply(&event) {
            return Err(SessionError::CorruptLog {
                path: self.log_path(id).display().to_string(),
                line: 0,
                message: format!("refusing to write event: {message}"),
            });
        }
        log.append(event.clone())?;
        *handle.snapshot.write().expect("snapshot poisoned") = Arc::new(next);
        drop(log);
        match event {
            SessionEvent::StateChanged { to, .. } => self.notify(id, SessionUpdate::State { state: to }),
            SessionEvent::TurnAppended { turn } => self.notify(id, SessionUpdate::Turn { turn }),
            SessionEvent::SlotsSet { slots } => self.notify(id, SessionUpdate::Slots { slots }),
            SessionEvent::ImageAttached { .. } | SessionEvent::Created { .. } => {}
        }
        Ok(())
    }

    fn transition(&self, id: &str, handle: &Handle, to: SessionState) -> Result<(), SessionError> {
        let from = handle.snapshot().state;
        self.append(id, handle, SessionEvent::StateChanged { from, to })
    }

    fn add_turn(
        &self,
        id: &str,
        handle: &Handle,
        author: Author,
        text: String,
        attachments: Vec<Attachment>,
    ) -> Result<Turn, SessionError> {
        let turn = Turn {
            index: handle.snapshot().turns.len(),
            author,
            text,
            attachments,
            timestamp: now(),
        };
        self.append(id, handle, SessionEvent::TurnAppended { turn: turn.clone() })?;
        Ok(turn)
    }

    pub fn create_session(&self) -> Result<Session, SessionError> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let path = self.log_path(&id);
        let handle = Arc::new(Handle {
            op: Mutex::new(()),
            log: Mutex::new(LogWriter::open(&path, 0)?),
            snapshot: RwLock::new(Arc::new(Session::blank())),
        });
        self.append(&id, &handle, SessionEvent::Created { id: id.clone(), at: now() })?;
        self.sessions.write().expect("session map poisoned").insert(id.clone(), handle.clone());
        Ok((*handle.snapshot()).clone())
    }

    /// Snapshot read; never waits for a running edit.
    pub fn get_session(&self, id: &str) -> Result<Arc<Session>, SessionError> {
        Ok(self.handle(id)?.snapshot())
    }

    pub fn get_transcript(&self, id: &str) -> Result<Vec<Turn>, SessionError> {
        Ok(self.get_session(id)?.turns.clone())
    }

    /// Validates, normalizes to PNG and stores the upload, which becomes
    /// both the `original` and the `current` image.
    pub fn attach_image(&self, id: &str, bytes: &[u8]) -> Result<ContentHash, SessionError> {
        let handle = self.handle(id)?;
        let _op = handle.op.lock().expect("session op poisoned");
        let min = self.engine.config().session.min_image_side;
        let (png, (width, height)) = imaging::normalize_to_png(bytes)
            .map_err(|e| SessionError::ImageRejected(format!("the file is not a readable PNG or JPEG image ({e})")))?;
        if width.min(height) < min {
            return Err(SessionError::ImageRejected(format!(
                "the image is {width}x{height}; both sides must be at least {min} pixels"
            )));
        }
        let image_ref = self.engine.store().put(&png)?;
        self.append(
            id,
            &handle,
            SessionEvent::ImageAttached {
                image_ref: image_ref.clone(),
                width,
                height,
            },
        )?;
        self.notify(id, SessionUpdate::Slots { slots: handle.snapshot().image_slots.clone() });
        if handle.snapshot().state == SessionState::AwaitingImage {
            self.transition(id, &handle, SessionState::Ready)?;
        }
        Ok(image_ref)
    }

    /// Records the user's turn and returns the assistant's reply turn.
    /// Edit requests run the planner against the `current` image; other
    /// messages are answered without a state change.
    pub fn handle_message(&self, id: &str, text: &str) -> Result<Turn, SessionError> {
        let handle = self.handle(id)?;
        let _op = handle.op.lock().expect("session op poisoned");
        self.add_turn(id, &handle, Author::User, text.to_string(), Vec::new())?;

        let planner = self.engine.planner(None);
        let parsed = planner.split(text).ok().map(|(clauses, how)| {
            let classified: Vec<_> = clauses
                .into_iter()
                .map(|c| {
                    let r = planner.classify(&c);
                    (c, r)
                })
                .collect();
            (classified, how)
        });
        let is_edit = parsed
            .as_ref()
            .is_some_and(|(classified, _)| classified.iter().any(|(_, r)| r.is_ok()));
        let state = handle.snapshot().state;
        if !is_edit {
            let reply = self.small_talk(text);
            return self.add_turn(id, &handle, Author::Assistant, reply, Vec::new());
        }
        if !state.has_image() {
            return self.add_turn(id, &handle, Author::Assistant, NEED_IMAGE.to_string(), Vec::new());
        }
        let (classified, how) = parsed.expect("edit requests parsed");
        self.run_edit(id, &handle, classified, how)
    }

    fn small_talk(&self, text: &str) -> String {
        if is_capability_question(text) || !self.engine.config().session.free_chat {
            let lead = if is_capability_question(text) {
                ""
            } else {
                "I could not find an edit in that message. "
            };
            return format!("{lead}{CAPABILITIES}");
        }
        let messages = [
            ChatMessage::system(format!("You are a fashion editing assistant. {CAPABILITIES} Answer briefly.")),
            ChatMessage::user(text.to_string()),
        ];
        match self.engine.backends().chat.complete(&messages) {
            Ok(reply) if !reply.trim().is_empty() => reply.trim().to_string(),
            _ => CAPABILITIES.to_string(),
        }
    }

    fn run_edit(
        &self,
        id: &str,
        handle: &Handle,
        classified: Classified,
        how: crate::planner::Derivation,
    ) -> Result<Turn, SessionError> {
        let input = handle.snapshot().current_image().cloned().expect("state implies an image");
        self.transition(id, handle, SessionState::Planning)?;

        let log_error: Mutex<Option<SessionError>> = Mutex::new(None);
        let observer = |event: &ProgressEvent| {
            if let ProgressEvent::TaskStarted { task_number, .. } = event {
                if let Err(e) = self.transition(id, handle, SessionState::Executing { task_index: task_number - 1 }) {
                    log_error.lock().expect("poisoned").get_or_insert(e);
                }
            }
            self.notify(id, SessionUpdate::Progress { progress: event.clone() });
        };
        let planner = self.engine.planner(Some(&observer));
        let outcome = planner.execute_classified(&input, classified, how);
        if let Some(e) = log_error.into_inner().expect("poisoned") {
            return Err(e);
        }

        let report = match outcome {
            Ok(r) => r,
            Err(e) => return self.fail_request(id, handle, &format!("I could not plan that request: {e}"), Vec::new()),
        };
        let attachments = self.attachments(&report);
        self.record_results(id, handle, &report)?;
        match &report.failure {
            None => {
                self.transition(id, handle, SessionState::Review)?;
                let text = summary(&report);
                self.add_turn(id, handle, Author::Assistant, text, attachments)
            }
            Some(f) => {
                let done = report.results.len();
                let mut text = format!("Step {} (\"{}\") failed: {}", f.task_number, f.clause, f.error);
                if done > 0 {
                    text.push_str(&format!(". The {done} step(s) before it were applied and kept."));
                }
                self.fail_request(id, handle, &text, attachments)
            }
        }
    }

    fn fail_request(
        &self,
        id: &str,
        handle: &Handle,
        text: &str,
        attachments: Vec<Attachment>,
    ) -> Result<Turn, SessionError> {
        self.transition(id, handle, SessionState::Failed)?;
        let turn = self.add_turn(id, handle, Author::Assistant, text.to_string(), attachments)?;
        self.transition(id, handle, SessionState::Ready)?;
        Ok(turn)
    }

    fn record_results(&self, id: &str, handle: &Handle, report: &ExecutionReport) -> Result<(), SessionError> {
        let Some(last) = report.final_image() else { return Ok(()) };
        let mut n = handle.snapshot().image_slots.keys().filter(|k| k.starts_with("task-")).count();
        let mut slots = BTreeMap::new();
        for r in &report.results {
            n += 1;
            slots.insert(format!("task-{n}"), r.result_ref().clone());
        }
        slots.insert("current".to_string(), last.clone());
        self.append(id, handle, SessionEvent::SlotsSet { slots })
    }

    fn attachments(&self, report: &ExecutionReport) -> Vec<Attachment> {
        let mut out = Vec::new();
        for r in &report.results {
            let task_number = Some(r.task_number);
            let mut push = |kind, hash: &ContentHash| {
                out.push(Attachment {
                    kind,
                    hash: hash.clone(),
                    task_number,
                })
            };
            push(AttachmentKind::Image, r.result_ref());
            push(AttachmentKind::Mask, &r.job.mask_ref);
            push(AttachmentKind::MaskPlan, &r.job.mask_plan_ref);
            push(AttachmentKind::JobRecord, &r.job_ref);
            if let Ok(manifest) = self.engine.coseg_manifest(r.input_ref()) {
                push(AttachmentKind::Cosegmentation, &manifest);
            }
        }
        out
    }
}

impl Handle {
    fn snapshot(&self) -> Arc<Session> {
        self.snapshot.read().expect("snapshot poisoned").clone()
    }
}

fn describe(task: &EditTask) -> String {
    match task.category {
        Category::Replacement => format!("replaced the {} with {}", task.source(), task.target()),
        Category::Recoloring => format!("recolored the {} ({})", task.source(), task.target()),
        Category::Addition => format!("added {}", task.target()),
        Category::Removal => format!("removed the {}", task.source()),
    }
}

fn summary(report: &ExecutionReport) -> String {
    let steps: Vec<String> = report
        .results
        .iter()
        .map(|r| format!("{}. {}", r.task_number, describe(&r.task)))
        .collect();
    format!(
        "Done. {}\nTell me if you want further changes to this result.",
        steps.join("\n")
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EngineConfig;

    fn photo(w: u32, h: u32) -> Vec<u8> {
        imaging::encode_rgb_png(&crate::backend::mock::synthetic::photo(w, h).unwrap()).unwrap()
    }

    fn manager(dir: &std::path::Path) -> SessionManager {
        let mut cfg = EngineConfig::mock(dir);
        cfg.planner.seed = Some(1);
        SessionManager::open(Arc::new(Engine::open(cfg).unwrap())).unwrap()
    }

    #[test]
    fn upload_rules() {
        let dir = tempfile::tempdir().unwrap();
        let m = manager(dir.path());
        let s = m.create_session().unwrap();
        assert_eq!(s.state, SessionState::AwaitingImage);
        assert!(m.get_transcript(&s.id).unwrap().is_empty());
        assert!(matches!(m.attach_image(&s.id, &photo(64, 64)), Err(SessionError::ImageRejected(_))));
        assert!(matches!(m.attach_image(&s.id, b"not an image"), Err(SessionError::ImageRejected(_))));
        let a = m.attach_image(&s.id, &photo(256, 384)).unwrap();
        let b = m.attach_image(&s.id, &photo(256, 384)).unwrap();
        assert_eq!(a, b);
        assert_eq!(m.get_session(&s.id).unwrap().state, SessionState::Ready);
        assert!(matches!(m.get_transcript("nope"), Err(SessionError::NotFound(_))));
    }

    #[test]
    fn small_talk_keeps_state() {
        let dir = tempfile::tempdir().unwrap();
        let m = manager(dir.path());
        let s = m.create_session().unwrap();
        m.attach_image(&s.id, &photo(256, 256)).unwrap();
        let turn = m.handle_message(&s.id, "what can you do?").unwrap();
        assert_eq!(turn.author, Author::Assistant);
        assert!(turn.text.contains("recolor"));
        let session = m.get_session(&s.id).unwrap();
        assert_eq!(session.state, SessionState::Ready);
        assert_eq!(session.turns.len(), 2);
    }

    #[test]
    fn edit_before_upload_asks_for_image() {
        let dir = tempfile::tempdir().unwrap();
        let m = manager(dir.path());
        let s = m.create_session().unwrap();
        let turn = m.handle_message(&s.id, "remove the necklace").unwrap();
        assert_eq!(turn.text, NEED_IMAGE);
        assert_eq!(m.get_session(&s.id).unwrap().state, SessionState::AwaitingImage);
    }
}
