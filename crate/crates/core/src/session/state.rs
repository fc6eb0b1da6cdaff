use std::fmt;

use serde::{Deserialize, Serialize};

/// Dialogue state. `Executing` carries the 0-based index of the running task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum SessionState {
    AwaitingImage,
    Ready,
    Planning,
    Executing { task_index: usize },
    Review,
    Failed,
}

impl SessionState {
    /// Whether the machine has an edge `self → to`.
    pub fn can_transition(self, to: SessionState) -> bool {
        use SessionState::*;
        match (self, to) {
            (_, Failed) => self != Failed,
            (AwaitingImage, Ready) | (Failed, Ready) => true,
            (Ready, Planning) | (Review, Planning) => true,
            (Planning, Executing { task_index: 0 }) => true,
            (Executing { task_index: a }, Executing { task_index: b }) => b == a + 1,
            (Executing { .. }, Review) => true,
            _ => false,
        }
    }

    /// Whether an image has been attached (the `current` slot resolves).
    pub fn has_image(self) -> bool {
        self != SessionState::AwaitingImage
    }

    pub fn is_busy(self) -> bool {
        matches!(self, SessionState::Planning | SessionState::Executing { .. })
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SessionState::AwaitingImage => f.write_str("awaiting-image"),
            SessionState::Ready => f.write_str("ready"),
            SessionState::Planning => f.write_str("planning"),
            SessionState::Executing { task_index } => write!(f, "executing({task_index})"),
            SessionState::Review => f.write_str("review"),
            SessionState::Failed => f.write_str("failed"),
        }
    }
}
