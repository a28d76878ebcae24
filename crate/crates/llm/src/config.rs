use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::LlmError;

pub const DEFAULT_API_BASE: &str = "https://api.openai.com/v1";
pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo";

pub const ENV_API_KEY: &str = "LMD_API_KEY";
pub const ENV_API_BASE: &str = "LMD_API_BASE";
pub const ENV_MODEL: &str = "LMD_MODEL";

/// API key that never shows up in `Debug`, `Display` or serialized output.
#[derive(Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(transparent)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(key: impl Into<String>) -> Self {
        Self(key.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(<redacted>)")
    }
}

impl Serialize for ApiKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(if self.0.is_empty() { "" } else { "<redacted>" })
    }
}

/// Where the whole in-context prompt goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptRole {
    /// One user message holding the full prompt.
    #[default]
    User,
    /// Instructions and examples as a system message, completion cue as user.
    System,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    /// Base URL; `/chat/completions` is appended.
    pub endpoint_url: String,
    pub model_name: String,
    pub api_key: ApiKey,
    pub temperature: f64,
    #[serde(with = "millis")]
    pub timeout: Duration,
    pub max_retries: u32,
    /// First retry delay; doubles on each further retry.
    #[serde(with = "millis")]
    pub backoff_base: Duration,
    pub prompt_role: PromptRole,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint_url: DEFAULT_API_BASE.into(),
            model_name: DEFAULT_MODEL.into(),
            api_key: ApiKey::default(),
            temperature: 0.0,
            timeout: Duration::from_secs(60),
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
            prompt_role: PromptRole::User,
        }
    }
}

impl LlmConfig {
    /// Overrides fields from `LMD_API_KEY`, `LMD_API_BASE` and `LMD_MODEL`.
    pub fn with_env(self) -> Self {
        self.with_vars(|k| std::env::var(k).ok())
    }

    pub fn with_vars(mut self, get: impl Fn(&str) -> Option<String>) -> Self {
        if let Some(k) = get(ENV_API_KEY).filter(|v| !v.is_empty()) {
            self.api_key = ApiKey::new(k);
        }
        if let Some(v) = get(ENV_API_BASE).filter(|v| !v.is_empty()) {
            self.endpoint_url = v;
        }
        if let Some(v) = get(ENV_MODEL).filter(|v| !v.is_empty()) {
            self.model_name = v;
        }
        self
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(LlmError::Config(
                "temperature must be finite and >= 0".into(),
            ));
        }
        if self.endpoint_url.trim().is_empty() {
            return Err(LlmError::Config("endpoint url is empty".into()));
        }
        if self.model_name.trim().is_empty() {
            return Err(LlmError::Config("model name is empty".into()));
        }
        Ok(())
    }

    pub fn completions_url(&self) -> String {
        format!(
            "{}/chat/completions",
            self.endpoint_url.trim_end_matches('/')
        )
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_overrides() {
        let c = LlmConfig::default().with_vars(|k| match k {
            ENV_API_KEY => Some("sk-secret".into()),
            ENV_MODEL => Some("other-model".into()),
            _ => None,
        });
        assert_eq!(c.api_key.expose(), "sk-secret");
        assert_eq!(c.model_name, "other-model");
        assert_eq!(c.endpoint_url, DEFAULT_API_BASE);
    }

    #[test]
    fn key_is_never_printed() {
        let c = LlmConfig {
            api_key: ApiKey::new("sk-secret"),
            ..LlmConfig::default()
        };
        assert!(!format!("{c:?}").contains("sk-secret"));
        assert!(!serde_json::to_string(&c).unwrap().contains("sk-secret"));
    }

    #[test]
    fn defaults() {
        let c = LlmConfig::default();
        assert_eq!(c.model_name, "gpt-3.5-turbo");
        assert_eq!(c.temperature, 0.0);
        assert_eq!(
            c.completions_url(),
            "https://api.openai.com/v1/chat/completions"
        );
        assert!(LlmConfig {
            temperature: -1.0,
            ..c
        }
        .validate()
        .is_err());
    }
}
