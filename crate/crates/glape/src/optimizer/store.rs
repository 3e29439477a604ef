//! Run-directory layout and persistence.
//!
//! ```text
//! <run dir>/
//!   config.json        resolved config snapshot, written once at creation
//!   trajectory.jsonl   one line per evaluated prompt, append-only
//!   details/p000.json  per-question vote results for each prompt
//!   checkpoint.json    last fully completed iteration, atomically replaced
//!   scores.json        final pool-wide refined scores
//!   report/            written by analyze
//!   run.log            tracing output
//! ```
//!
//! Trajectory lines carry the raw mean self-consistency but no refined
//! scores (those depend on the whole pool and are recomputed) and no
//! timestamps, so two runs with the same seed produce byte-identical
//! trajectories.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::AppConfig;
use crate::error::{Error, Result};

use super::QuestionVote;

pub const CONFIG_FILE: &str = "config.json";
pub const TRAJECTORY_FILE: &str = "trajectory.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const SCORES_FILE: &str = "scores.json";
pub const DETAILS_DIR: &str = "details";
pub const REPORT_DIR: &str = "report";
pub const LOG_FILE: &str = "run.log";

/// One evaluated prompt in trajectory order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    /// Position in the pool; also determines the prompt id `p<index>`.
    pub index: usize,
    /// 0 for initial prompts, then the optimizer iteration that proposed it.
    pub iteration: usize,
    pub prompt_text: String,
    /// Mean raw self-consistency over the question set, 0..=100.
    pub mean_sc: f64,
    /// Path of the vote detail file, relative to the run directory.
    pub detail_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub completed_iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<String>,
}

/// Per-question votes for one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptDetail {
    pub prompt_id: String,
    pub prompt_text: String,
    pub votes: Vec<QuestionVote>,
}

pub fn prompt_id(index: usize) -> String {
    format!("p{index:03}")
}

pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    /// Create a fresh run directory. Refuses a directory that already holds
    /// a run, to avoid silently clobbering artifacts.
    pub fn create(root: &Path, cfg: &AppConfig) -> Result<Self> {
        if root.join(TRAJECTORY_FILE).exists() || root.join(CONFIG_FILE).exists() {
            return Err(Error::Data(format!(
                "run directory {} already holds a run (resume it or pick another directory)",
                root.display()
            )));
        }
        fs::create_dir_all(root.join(DETAILS_DIR))
            .map_err(|e| Error::Data(format!("cannot create {}: {e}", root.display())))?;
        let store = RunStore {
            root: root.to_path_buf(),
        };
        store.write_json(CONFIG_FILE, cfg)?;
        fs::write(store.root.join(TRAJECTORY_FILE), "")
            .map_err(|e| store.io_err(TRAJECTORY_FILE, e))?;
        Ok(store)
    }

    /// Open an existing run directory.
    pub fn open(root: &Path) -> Result<Self> {
        if !root.join(CONFIG_FILE).exists() {
            return Err(Error::Data(format!(
                "{} is not a run directory (missing {CONFIG_FILE})",
                root.display()
            )));
        }
        Ok(RunStore {
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn log_path(&self) -> PathBuf {
        self.root.join(LOG_FILE)
    }

    fn io_err(&self, name: &str, e: std::io::Error) -> Error {
        Error::Data(format!("{}: {e}", self.root.join(name).display()))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value).expect("artifact serializes");
        fs::write(self.root.join(name), text).map_err(|e| self.io_err(name, e))
    }

    /// Write a file atomically: the destination either keeps its old content
    /// or holds the complete new content, never a partial write.
    fn write_json_atomic<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value).expect("artifact serializes");
        let tmp = self.root.join(format!("{name}.tmp"));
        fs::write(&tmp, text).map_err(|e| self.io_err(name, e))?;
        fs::rename(&tmp, self.root.join(name)).map_err(|e| self.io_err(name, e))
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&self, name: &str) -> Result<T> {
        let path = self.root.join(name);
        let raw = fs::read_to_string(&path)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&raw)
            .map_err(|e| Error::Data(format!("malformed {}: {e}", path.display())))
    }

    pub fn load_config_snapshot(&self) -> Result<AppConfig> {
        self.read_json(CONFIG_FILE)
    }

    pub fn append_entry(&self, entry: &TrajectoryEntry) -> Result<()> {
        use std::io::Write;
        let mut line = serde_json::to_string(entry).expect("entry serializes");
        line.push('\n');
        let mut f = fs::OpenOptions::new()
            .append(true)
            .open(self.root.join(TRAJECTORY_FILE))
            .map_err(|e| self.io_err(TRAJECTORY_FILE, e))?;
        f.write_all(line.as_bytes())
            .map_err(|e| self.io_err(TRAJECTORY_FILE, e))
    }

    pub fn load_entries(&self) -> Result<Vec<TrajectoryEntry>> {
        let path = self.root.join(TRAJECTORY_FILE);
        let raw = fs::read_to_string(&path)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (lineno, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: TrajectoryEntry = serde_json::from_str(line).map_err(|e| {
                Error::Data(format!("{}:{}: malformed entry: {e}", path.display(), lineno + 1))
            })?;
            entries.push(entry);
        }
        Ok(entries)
    }

    /// Replace the trajectory wholesale; used on resume to drop entries past
    /// the checkpoint.
    pub fn rewrite_entries(&self, entries: &[TrajectoryEntry]) -> Result<()> {
        let mut out = String::new();
        for e in entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        let tmp = self.root.join(format!("{TRAJECTORY_FILE}.tmp"));
        fs::write(&tmp, out).map_err(|e| self.io_err(TRAJECTORY_FILE, e))?;
        fs::rename(&tmp, self.root.join(TRAJECTORY_FILE))
            .map_err(|e| self.io_err(TRAJECTORY_FILE, e))
    }

    pub fn write_detail(&self, detail: &PromptDetail) -> Result<String> {
        let rel = format!("{DETAILS_DIR}/{}.json", detail.prompt_id);
        self.write_json(&rel, detail)?;
        Ok(rel)
    }

    pub fn load_detail(&self, detail_ref: &str) -> Result<PromptDetail> {
        self.read_json(detail_ref)
    }

    pub fn write_checkpoint(&self, ck: &Checkpoint) -> Result<()> {
        self.write_json_atomic(CHECKPOINT_FILE, ck)
    }

    pub fn load_checkpoint(&self) -> Result<Option<Checkpoint>> {
        if !self.root.join(CHECKPOINT_FILE).exists() {
            return Ok(None);
        }
        self.read_json(CHECKPOINT_FILE).map(Some)
    }

    pub fn write_scores<T: Serialize>(&self, scores: &T) -> Result<()> {
        self.write_json_atomic(SCORES_FILE, scores)
    }
}
