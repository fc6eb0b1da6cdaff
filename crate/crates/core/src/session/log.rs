use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Session, SessionError, SessionState, Turn};
use crate::store::ContentHash;

/// One state change of a session. The log is the sequence of these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum SessionEvent {
    Created { id: String, at: String },
    ImageAttached { image_ref: ContentHash, width: u32, height: u32 },
    StateChanged { from: SessionState, to: SessionState },
    TurnAppended { turn: Turn },
    SlotsSet { slots: BTreeMap<String, ContentHash> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub seq: u64,
    #[serde(flatten)]
    pub event: SessionEvent,
}

impl Session {
    /// Applies one event, enforcing the state machine and append-only turns.
    pub fn apply(&mut self, event: &SessionEvent) -> Result<(), String> {
        match event {
            SessionEvent::Created { id, at } => {
                if !self.id.is_empty() {
                    return Err("session created twice".into());
                }
                self.id = id.clone();
                self.created_at = at.clone();
            }
            SessionEvent::ImageAttached { image_ref, .. } => {
                self.image_slots.insert("original".into(), image_ref.clone());
                self.image_slots.insert("current".into(), image_ref.clone());
            }
            SessionEvent::StateChanged { from, to } => {
                if *from != self.state {
                    return Err(format!("transition from {from} but session is {}", self.state));
                }
                if !from.can_transition(*to) {
                    return Err(format!("illegal transition {from} -> {to}"));
                }
                if to.has_image() && !self.image_slots.contains_key("current") {
                    return Err(format!("{to} without a current image"));
                }
                self.state = *to;
            }
            SessionEvent::TurnAppended { turn } => {
                if turn.index != self.turns.len() {
                    return Err(format!("turn {} appended at position {}", turn.index, self.turns.len()));
                }
                self.turns.push(turn.clone());
            }
            SessionEvent::SlotsSet { slots } => {
                self.image_slots.extend(slots.iter().map(|(k, v)| (k.clone(), v.clone())));
            }
        }
        Ok(())
    }
}

/// Rebuilds a session from its event log.
pub fn replay_log(path: &Path) -> Result<(Session, u64), SessionError> {
    let file = File::open(path)?;
    let mut session = Session::blank();
    let mut seq = 0;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |message: String| SessionError::CorruptLog {
            path: path.display().to_string(),
            line: i + 1,
            message,
        };
        let entry: LogLine = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
        if entry.seq != seq {
            return Err(corrupt(format!("sequence number {} where {seq} was expected", entry.seq)));
        }
        session.apply(&entry.event).map_err(corrupt)?;
        seq += 1;
    }
    if session.id.is_empty() {
        return Err(SessionError::CorruptLog {
            path: path.display().to_string(),
            line: 0,
            message: "log has no creation event".into(),
        });
    }
    Ok((session, seq))
}

/// Append-only writer; each event is one flushed line.
pub(crate) struct LogWriter {
    file: File,
    next_seq: u64,
}

impl LogWriter {
    pub(crate) fn open(path: &Path, next_seq: u64) -> Result<Self, SessionError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file, next_seq })
    }

    pub(crate) fn append(&mut self, event: SessionEvent) -> Result<(), SessionError> {
        let mut line = serde_json::to_vec(&LogLine {
            seq: self.next_seq,
            event,
        })
        .expect("plain event serializes");
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()?;
        self.next_seq += 1;
        Ok(())
    }
}
