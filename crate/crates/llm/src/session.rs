//! Multi-round layout dialogs.

use std::collections::HashMap;
use std::sync::{Arc, Mutex as StdMutex};
use std::time::{SystemTime, UNIX_EPOCH};

use lmd_core::{Canvas, Layout};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;
use uuid::Uuid;

use crate::backend::{initial_messages, ChatMessage, LlmBackend, Role};
use crate::config::PromptRole;
use crate::prompt::PromptTemplate;
use crate::{parse_completion, LlmError};

fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogSession {
    pub id: Uuid,
    /// Append-only history: the opening prompt, then user/assistant pairs.
    pub messages: Vec<ChatMessage>,
    /// Parse of the last assistant message, if it parsed.
    pub current_layout: Option<Layout>,
    /// Why the last assistant message did not parse.
    pub diagnostic: Option<String>,
    pub canvas: Canvas,
    /// Unix milliseconds.
    pub created_at: u64,
    pub updated_at: u64,
}

impl DialogSession {
    /// Layouts parsed from every assistant turn, oldest first; `None` where a
    /// turn did not parse.
    pub fn layout_history(&self) -> Vec<Option<Layout>> {
        self.messages
            .iter()
            .filter(|m| m.role == Role::Assistant)
            .map(|m| parse_completion(&m.content, self.canvas).ok())
            .collect()
    }

    fn absorb(&mut self, completion: String) -> Result<(), LlmError> {
        match parse_completion(&completion, self.canvas) {
            Ok(layout) => {
                self.current_layout = Some(layout);
                self.diagnostic = None;
            }
            Err(d) => {
                log::warn!("session {}: completion did not parse: {d}", self.id);
                self.current_layout = None;
                self.diagnostic = Some(d.to_string());
            }
        }
        self.messages
            .push(ChatMessage::new(Role::Assistant, completion)?);
        self.updated_at = now_millis();
        Ok(())
    }
}

/// Opens a dialog: builds the prompt for `caption`, asks for a completion
/// and parses it. A completion that does not parse still yields a session,
/// with no layout and the diagnostic recorded.
pub async fn start_session(
    backend: &dyn LlmBackend,
    template: &PromptTemplate,
    caption: &str,
    role: PromptRole,
    canvas: Canvas,
) -> Result<DialogSession, LlmError> {
    let messages = initial_messages(template, caption, role)?;
    let completion = backend.complete(&messages).await?;
    let now = now_millis();
    let mut session = DialogSession {
        id: Uuid::new_v4(),
        messages,
        current_layout: None,
        diagnostic: None,
        canvas,
        created_at: now,
        updated_at: now,
    };
    session.absorb(completion)?;
    Ok(session)
}

/// Sends one follow-up instruction with the full history and returns the
/// extended session. The input session is left untouched on error.
pub async fn dialog_turn(
    backend: &dyn LlmBackend,
    session: &DialogSession,
    instruction: &str,
) -> Result<DialogSession, LlmError> {
    if instruction.trim().is_empty() {
        return Err(LlmError::Precondition(
            "instruction must be non-empty".into(),
        ));
    }
    let mut next = session.clone();
    next.messages.push(ChatMessage::user(instruction)?);
    let completion = backend.complete(&next.messages).await?;
    next.absorb(completion)?;
    Ok(next)
}

/// Sessions by id; turns on one session run one at a time, distinct
/// sessions in parallel.
#[derive(Default)]
pub struct SessionStore {
    sessions: StdMutex<HashMap<Uuid, Arc<Mutex<DialogSession>>>>,
}

impl SessionStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&self, session: DialogSession) -> Uuid {
        let id = session.id;
        self.sessions
            .lock()
            .expect("session map poisoned")
            .insert(id, Arc::new(Mutex::new(session)));
        id
    }

    fn handle(&self, id: &Uuid) -> Result<Arc<Mutex<DialogSession>>, LlmError> {
        self.sessions
            .lock()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or(LlmError::SessionNotFound(*id))
    }

    pub async fn get(&self, id: &Uuid) -> Result<DialogSession, LlmError> {
        Ok(self.handle(id)?.lock().await.clone())
    }

    pub fn len(&self) -> usize {
        self.sessions.lock().expect("session map poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Runs [`dialog_turn`] under the session's lock and stores the result.
    pub async fn turn(
        &self,
        backend: &dyn LlmBackend,
        id: &Uuid,
        instruction: &str,
    ) -> Result<DialogSession, LlmError> {
        let handle = self.handle(id)?;
        let mut guard = handle.lock().await;
        let next = dialog_turn(backend, &guard, instruction).await?;
        *guard = next.clone();
        Ok(next)
    }
}
