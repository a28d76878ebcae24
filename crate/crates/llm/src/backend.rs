//! Chat-completion backends: a live HTTP client and a table-driven mock.

use std::time::Duration;

use async_trait::async_trait;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{LlmConfig, PromptRole};
use crate::prompt::{build_prompt, completion_cue, PromptTemplate};
use crate::LlmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Result<Self, LlmError> {
        let content = content.into();
        if content.is_empty() {
            return Err(LlmError::Precondition(
                "message content must be non-empty".into(),
            ));
        }
        Ok(Self { role, content })
    }

    pub fn user(content: impl Into<String>) -> Result<Self, LlmError> {
        Self::new(Role::User, content)
    }
}

/// Anything that turns a message history into the next assistant message.
#[async_trait]
pub trait LlmBackend: Send + Sync {
    async fn complete(&self, messages: &[ChatMessage]) -> Result<String, LlmError>;
}

/// Messages opening a layout request for `caption`.
pub fn initial_messages(
    template: &PromptTemplate,
    caption: &str,
    role: PromptRole,
) -> Result<Vec<ChatMessage>, LlmError> {
    match role {
        PromptRole::User => Ok(vec![ChatMessage::user(build_prompt(template, caption)?)?]),
        PromptRole::System => {
            if caption.trim().is_empty() {
                return Err(LlmError::Precondition("caption must be non-empty".into()));
            }
            Ok(vec![
                ChatMessage::new(Role::System, template.preamble())?,
                ChatMessage::user(completion_cue(caption))?,
            ])
        }
    }
}

/// Sends `prompt` as a single user message and returns the assistant text.
pub async fn request_layout(backend: &dyn LlmBackend, prompt: &str) -> Result<String, LlmError> {
    backend.complete(&[ChatMessage::user(prompt)?]).await
}

/// OpenAI-style `POST {base}/chat/completions` client.
pub struct HttpLlm {
    config: LlmConfig,
    client: reqwest::Client,
}

impl HttpLlm {
    pub fn new(config: LlmConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let client = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| LlmError::Config(format!("http client: {e}")))?;
        Ok(Self { config, client })
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    async fn attempt(&self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        let body = json!({
            "model": self.config.model_name,
            "messages": messages,
            "temperature": self.config.temperature,
        });
        let mut req = self.client.post(self.config.completions_url()).json(&body);
        if !self.config.api_key.is_empty() {
            req = req.bearer_auth(self.config.api_key.expose());
        }
        let resp = req
            .send()
            .await
            .map_err(|e| LlmError::Transport(e.without_url().to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 {
            let retry_after = resp
                .headers()
                .get(reqwest::header::RETRY_AFTER)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<f64>().ok())
                .filter(|s| s.is_finite() && *s >= 0.0)
                .map(Duration::from_secs_f64);
            return Err(LlmError::RateLimited { retry_after });
        }
        let text = resp
            .text()
            .await
            .map_err(|e| LlmError::Transport(e.without_url().to_string()))?;
        if !status.is_success() {
            return Err(LlmError::Api {
                status: status.as_u16(),
                body: text,
            });
        }
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| LlmError::Api {
            status: status.as_u16(),
            body: format!("unreadable response ({e}): {text}"),
        })?;
        value
            .pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| LlmError::Api {
                status: status.as_u16(),
                body: format!("no choices[0].message.content in {text}"),
            })
    }
}

fn retryable(err: &LlmError) -> bool {
    match err {
        LlmError::Transport(_) | LlmError::RateLimited { .. } => true,
        LlmError::Api { status, .. } => *status >= 500,
        _ => false,
    }
}

#[async_trait]
impl LlmBackend for HttpLlm {
    async fn complete(&self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        let mut delay = self.config.backoff_base;
        let mut attempt = 0;
        loop {
            match self.attempt(messages).await {
                Ok(text) => return Ok(text),
                Err(err) if retryable(&err) && attempt < self.config.max_retries => {
                    let wait = match &err {
                        LlmError::RateLimited {
                            retry_after: Some(d),
                        } => *d,
                        _ => delay,
                    };
                    log::warn!(
                        "chat completion attempt {} failed ({err}); retrying in {wait:?}",
                        attempt + 1
                    );
                    tokio::time::sleep(wait).await;
                    delay = delay.saturating_mul(2);
                    attempt += 1;
                }
                Err(err) => return Err(err),
            }
        }
    }
}

/// Text a mock rule is matched against: the caption after the last
/// `Caption: ` cue in the last user message, or the whole last user message
/// when it has no cue.
pub fn mock_key(messages: &[ChatMessage]) -> Option<String> {
    let last = messages.iter().rev().find(|m| m.role == Role::User)?;
    Some(match last.content.rfind("Caption: ") {
        Some(i) => {
            let rest = &last.content[i + "Caption: ".len()..];
            rest.lines().next().unwrap_or("").trim().to_string()
        }
        None => last.content.trim().to_string(),
    })
}

/// Offline backend: first rule whose pattern matches [`mock_key`] wins.
#[derive(Debug, Clone, Default)]
pub struct MockLlm {
    rules: Vec<(Regex, String)>,
    fallback: Option<String>,
}

impl MockLlm {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rule(mut self, pattern: &str, completion: impl Into<String>) -> Result<Self, LlmError> {
        let re = Regex::new(pattern).map_err(|e| LlmError::Config(format!("mock pattern: {e}")))?;
        self.rules.push((re, completion.into()));
        Ok(self)
    }

    /// Rule matching `key` exactly.
    pub fn exact(mut self, key: &str, completion: impl Into<String>) -> Self {
        let re = Regex::new(&format!("^{}$", regex::escape(key))).expect("escaped pattern");
        self.rules.push((re, completion.into()));
        self
    }

    pub fn fallback(mut self, completion: impl Into<String>) -> Self {
        self.fallback = Some(completion.into());
        self
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn lookup(&self, key: &str) -> Option<&str> {
        self.rules
            .iter()
            .find(|(re, _)| re.is_match(key))
            .map(|(_, c)| c.as_str())
            .or(self.fallback.as_deref())
    }
}

#[async_trait]
impl LlmBackend for MockLlm {
    async fn complete(&self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        let key = mock_key(messages)
            .ok_or_else(|| LlmError::Precondition("no user message to answer".into()))?;
        self.lookup(&key)
            .map(str::to_string)
            .ok_or(LlmError::NoMockMatch(key))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run<F: std::future::Future>(f: F) -> F::Output {
        tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .build()
            .unwrap()
            .block_on(f)
    }

    #[test]
    fn mock_keys_on_caption() {
        let prompt = build_prompt(&PromptTemplate::default(), "two pandas in a forest").unwrap();
        let m = vec![ChatMessage::user(prompt).unwrap()];
        assert_eq!(mock_key(&m).as_deref(), Some("two pandas in a forest"));
        let mock = MockLlm::new().rule("panda", "P").unwrap().fallback("F");
        assert_eq!(run(mock.complete(&m)).unwrap(), "P");
        let other = vec![ChatMessage::user("add a dog on the right").unwrap()];
        assert_eq!(run(mock.complete(&other)).unwrap(), "F");
    }

    #[test]
    fn mock_without_match_errors() {
        let mock = MockLlm::new().exact("a", "A");
        let m = vec![ChatMessage::user("Caption: ab\nObjects: ").unwrap()];
        assert!(matches!(run(mock.complete(&m)), Err(LlmError::NoMockMatch(k)) if k == "ab"));
    }

    #[test]
    fn unreachable_endpoint_is_transport_error() {
        let llm = HttpLlm::new(LlmConfig {
            endpoint_url: "http://127.0.0.1:9".into(),
            max_retries: 0,
            timeout: Duration::from_secs(2),
            ..LlmConfig::default()
        })
        .unwrap();
        let err = run(request_layout(&llm, "hi")).unwrap_err();
        assert!(matches!(err, LlmError::Transport(_)), "{err:?}");
    }

    #[test]
    fn system_role_split() {
        let t = PromptTemplate::default();
        let m = initial_messages(&t, "a cat", PromptRole::System).unwrap();
        assert_eq!(m[0].role, Role::System);
        assert_eq!(
            format!("{}\n\n{}", m[0].content, m[1].content),
            build_prompt(&t, "a cat").unwrap()
        );
    }
}
