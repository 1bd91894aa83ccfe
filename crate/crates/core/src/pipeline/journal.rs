//! Append-only record of stage results, used to resume interrupted runs.
//!
//! One JSON object per line, keyed by `(sample_id, stage)`; a later line
//! replaces an earlier one with the same key. A final line without its
//! newline is a torn write from a killed process and is dropped on open.
//! Writes are flushed per line, which survives a process kill but not
//! power loss.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::backend::TokenUsage;
use super::{PipelineError, QualityVerdict, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub sample_id: String,
    pub stage: Stage,
    pub status: EntryStatus,
    /// Stage output, or the raw response text that could not be used.
    #[serde(default)]
    pub output: String,
    pub attempts: u32,
    #[serde(default)]
    pub usage: TokenUsage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdicts: Option<Vec<QualityVerdict>>,
}

pub type JournalState = BTreeMap<(String, Stage), JournalEntry>;

#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: Mutex<File>,
}

impl Journal {
    /// Opens (creating if needed) and replays the journal.
    pub fn open(path: &Path) -> Result<(Journal, JournalState), PipelineError> {
        let io = |e: std::io::Error| PipelineError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(io(e)),
        };
        let mut state = JournalState::new();
        let mut offset = 0;
        let mut keep = bytes.len();
        let mut line_no = 0;
        while offset < bytes.len() {
            line_no += 1;
            let (line, next, terminated) = match bytes[offset..].iter().position(|&b| b == b'\n') {
                Some(i) => (&bytes[offset..offset + i], offset + i + 1, true),
                None => (&bytes[offset..], bytes.len(), false),
            };
            if !line.iter().all(u8::is_ascii_whitespace) {
                match serde_json::from_slice::<JournalEntry>(line) {
                    Ok(entry) => {
                        state.insert((entry.sample_id.clone(), entry.stage), entry);
                    }
                    Err(_) if !terminated => {
                        log::warn!("{}: dropping torn final line {line_no}", path.display());
                        keep = offset;
                    }
                    Err(e) => {
                        return Err(PipelineError::CorruptJournal {
                            path: path.to_path_buf(),
                            line: line_no,
                            message: e.to_string(),
                        })
                    }
                }
            }
            offset = next;
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        if keep < bytes.len() {
            file.set_len(keep as u64).map_err(io)?;
        } else if bytes.last().is_some_and(|&b| b != b'\n') {
            file.write_all(b"\n").map_err(io)?;
        }
        Ok((
            Journal {
                path: path.to_path_buf(),
                file: Mutex::new(file),
            },
            state,
        ))
    }

    pub fn append(&self, entry: &JournalEntry) -> Result<(), PipelineError> {
        let mut line = serde_json::to_string(entry).map_err(|e| PipelineError::Io {
            path: self.path.clone(),
            message: e.to_string(),
        })?;
        line.push('\n');
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| PipelineError::Io {
                path: self.path.clone(),
                message: e.to_string(),
            })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}
