//! Append-only JSON-Lines label log.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use aerialign_core::registration::EstimateStatus;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::{ReviewError, ReviewResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accepted,
    Rejected,
}

impl Verdict {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "accepted" => Some(Self::Accepted),
            "rejected" => Some(Self::Rejected),
            _ => None,
        }
    }

    pub fn status(self) -> EstimateStatus {
        match self {
            Self::Accepted => EstimateStatus::Accepted,
            Self::Rejected => EstimateStatus::Rejected,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewLabel {
    pub frame_id: String,
    pub verdict: Verdict,
    pub annotator: String,
    pub labeled_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Single-writer handle on the label log.
///
/// Every append is flushed and synced before it returns, so a label whose
/// append returned survives a crash. A torn trailing line left by a crash
/// mid-write is truncated when the log is reopened.
#[derive(Debug)]
pub struct LabelLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl LabelLog {
    /// Opens or creates the log and returns it with the labels it holds.
    pub fn open(path: &Path) -> ReviewResult<(Self, Vec<ReviewLabel>)> {
        let io = |e| ReviewError::io(path, e);
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)
            .map_err(io)?;
        let mut text = String::new();
        file.read_to_string(&mut text).map_err(io)?;
        let complete = text.rfind('\n').map_or(0, |i| i + 1);
        if complete < text.len() {
            log::warn!("{}: dropping torn trailing record", path.display());
            file.set_len(complete as u64).map_err(io)?;
            file.seek(SeekFrom::End(0)).map_err(io)?;
        }
        let labels = parse_labels(&text[..complete], path)?;
        Ok((
            Self {
                path: path.to_path_buf(),
                file: Mutex::new(file),
            },
            labels,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends `label` as one line and syncs it to disk.
    pub fn append(&self, label: &ReviewLabel) -> ReviewResult<()> {
        let mut line = serde_json::to_vec(label).expect("label serializes");
        line.push(b'\n');
        let mut file = self.file.lock().unwrap_or_else(|p| p.into_inner());
        file.write_all(&line).map_err(|e| ReviewError::io(&self.path, e))?;
        file.sync_data().map_err(|e| ReviewError::io(&self.path, e))
    }
}

fn parse_labels(text: &str, path: &Path) -> ReviewResult<Vec<ReviewLabel>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ReviewError::Log {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Reads a label log without opening it for writing.
pub fn read_labels(path: &Path) -> ReviewResult<Vec<ReviewLabel>> {
    let text = std::fs::read_to_string(path).map_err(|e| ReviewError::io(path, e))?;
    let complete = text.rfind('\n').map_or(0, |i| i + 1);
    parse_labels(&text[..complete], path)
}

/// Effective verdict per frame: the last label wins.
pub fn effective_labels(labels: &[ReviewLabel]) -> HashMap<String, Verdict> {
    let mut out = HashMap::new();
    for l in labels {
        out.insert(l.frame_id.clone(), l.verdict);
    }
    out
}
