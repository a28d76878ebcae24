use std::path::{Path, PathBuf};

use lmd_core::generator::GenerationConfig;
use lmd_llm::LlmConfig;
use serde::{Deserialize, Serialize};

use crate::ServiceError;

pub const ENV_DATA_DIR: &str = "LMD_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub data_dir: PathBuf,
    pub llm: LlmConfig,
    pub generation: GenerationConfig,
    pub bind: String,
    /// Concurrent generations and benchmark requests.
    pub parallelism: usize,
    /// Answer layout requests from the offline demo mock unless a request
    /// asks for the live backend.
    pub mock: bool,
    /// Allowed CORS origins; empty allows any.
    pub cors_origins: Vec<String>,
    /// How long a synchronous generate or pipeline request waits before
    /// answering 504 with the run id; the run keeps going.
    pub sync_timeout_secs: u64,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("lmd-data"),
            llm: LlmConfig::default(),
            generation: GenerationConfig::default(),
            bind: "127.0.0.1:8080".into(),
            parallelism: 2,
            mock: false,
            cors_origins: Vec::new(),
            sync_timeout_secs: 300,
        }
    }
}

impl AppConfig {
    /// Reads a JSON config file; missing fields take defaults.
    pub fn from_file(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))
    }

    /// Environment overrides: `LMD_DATA_DIR` plus the LLM variables.
    pub fn with_env(self) -> Self {
        self.with_vars(|k| std::env::var(k).ok())
    }

    pub fn with_vars(mut self, get: impl Fn(&str) -> Option<String>) -> Self {
        if let Some(d) = get(ENV_DATA_DIR).filter(|v| !v.is_empty()) {
            self.data_dir = d.into();
        }
        self.llm = self.llm.with_vars(get);
        self
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        if self.parallelism == 0 {
            return Err(ServiceError::Config(
                "parallelism must be at least 1".into(),
            ));
        }
        self.generation
            .validate()
            .map_err(|e| ServiceError::Config(e.to_string()))?;
        if !self.mock {
            self.llm
                .validate()
                .map_err(|e| ServiceError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Creates the data directory and checks that it accepts writes.
    pub fn prepare_data_dir(&self) -> Result<(), ServiceError> {
        std::fs::create_dir_all(self.data_dir.join("runs"))
            .and_then(|_| tempfile::NamedTempFile::new_in(&self.data_dir).map(drop))
            .map_err(|e| {
                ServiceError::Config(format!(
                    "data dir {} is not writable: {e}",
                    self.data_dir.display()
                ))
            })
    }
}
