//! File-backed run records: `data_dir/runs/<id>/run.json` plus artifacts.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use lmd_core::generator::{ComposeRecord, GenerationConfig};
use lmd_core::{Layout, ValidationReport};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("run {0} not found")]
    NotFound(String),
    #[error("corrupt run file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("i/o error at {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("invalid run id {0:?}")]
    InvalidId(String),
    #[error("run status cannot go from {from:?} to {to:?}")]
    StatusOrder { from: RunStatus, to: RunStatus },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |e| StoreError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Pending,
    LayoutDone,
    ImageDone,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Layout,
    Image,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub caption: Option<String>,
    pub layout: Option<Layout>,
    pub validation: Option<ValidationReport>,
    pub config: GenerationConfig,
    pub status: RunStatus,
    pub error: Option<StageError>,
    pub compose: Option<ComposeRecord>,
    /// Artifact file names inside the run directory.
    pub artifacts: Vec<String>,
    /// Unix milliseconds.
    pub created_at: u64,
    pub updated_at: u64,
}

fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl RunRecord {
    pub fn new(caption: Option<String>, config: GenerationConfig) -> Self {
        let now = now_millis();
        Self {
            id: Uuid::new_v4().to_string(),
            caption,
            layout: None,
            validation: None,
            config,
            status: RunStatus::Pending,
            error: None,
            compose: None,
            artifacts: Vec::new(),
            created_at: now,
            updated_at: now,
        }
    }

    /// Moves forward through pending -> layout_done -> image_done; any
    /// unfinished run may fail. Nothing leaves image_done or failed.
    pub fn advance(&mut self, to: RunStatus) -> Result<(), StoreError> {
        let ok = match (self.status, to) {
            (RunStatus::ImageDone | RunStatus::Failed, _) => false,
            (_, RunStatus::Failed) => true,
            (from, to) => to > from,
        };
        if !ok {
            return Err(StoreError::StatusOrder {
                from: self.status,
                to,
            });
        }
        self.status = to;
        self.updated_at = now_millis();
        Ok(())
    }

    pub fn fail(&mut self, stage: Stage, message: impl Into<String>) -> Result<(), StoreError> {
        self.advance(RunStatus::Failed)?;
        self.error = Some(StageError {
            stage,
            message: message.into(),
        });
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

fn check_id(id: &str) -> Result<(), StoreError> {
    if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
        return Err(StoreError::InvalidId(id.into()));
    }
    Ok(())
}

/// Writes through a temp file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| io_err(path)(e.error))?;
    Ok(())
}

impl RunStore {
    /// Store rooted at `data_dir/runs`.
    pub fn open(data_dir: &Path) -> Result<Self, StoreError> {
        let root = data_dir.join("runs");
        std::fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(Self { root })
    }

    pub fn run_dir(&self, id: &str) -> Result<PathBuf, StoreError> {
        check_id(id)?;
        Ok(self.root.join(id))
    }

    pub fn store_run(&self, record: &RunRecord) -> Result<(), StoreError> {
        let dir = self.run_dir(&record.id)?;
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let bytes = serde_json::to_vec_pretty(record).expect("run record serializes");
        write_atomic(&dir.join("run.json"), &bytes)
    }

    pub fn load_run(&self, id: &str) -> Result<RunRecord, StoreError> {
        let path = self.run_dir(id)?.join("run.json");
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(StoreError::NotFound(id.into()))
            }
            Err(e) => return Err(io_err(&path)(e)),
        };
        serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt {
            path,
            message: e.to_string(),
        })
    }

    /// Writes one artifact and lists it on the record (the record itself is
    /// saved by the caller).
    pub fn write_artifact(
        &self,
        record: &mut RunRecord,
        name: &str,
        bytes: &[u8],
    ) -> Result<PathBuf, StoreError> {
        let dir = self.run_dir(&record.id)?;
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join(name);
        write_atomic(&path, bytes)?;
        if !record.artifacts.iter().any(|a| a == name) {
            record.artifacts.push(name.to_string());
        }
        Ok(path)
    }

    pub fn read_artifact(&self, id: &str, name: &str) -> Result<Vec<u8>, StoreError> {
        let path = self.run_dir(id)?.join(name);
        std::fs::read(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                StoreError::NotFound(format!("{id}/{name}"))
            } else {
                io_err(&path)(e)
            }
        })
    }
}
