//! Submission records, their append-only log and per-user quotas.
//!
//! Every state change of a record is appended to the log as one JSON line
//! holding the whole record; on startup the log is replayed and the last
//! line per id wins. Quota usage is derived from the records themselves, so
//! it survives restarts without separate bookkeeping.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use capeval_core::Violation;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::error::{ApiError, ConfigError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Queued,
    Scored,
    Rejected,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmissionRecord {
    pub id: String,
    pub user: String,
    pub split: String,
    pub timestamp_ms: u64,
    pub status: Status,
    /// Canonical report JSON, kept byte for byte.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<Box<RawValue>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cider_d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violations: Option<Vec<Violation>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Terminal outcome of scoring a queued record.
#[derive(Debug)]
pub enum Outcome {
    Scored { report: Box<RawValue>, cider_d: f64 },
    Invalid(Vec<Violation>),
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct QuotaUsage {
    pub limit: usize,
    pub used: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct LeaderboardRow {
    pub rank: usize,
    pub user: String,
    pub submission_id: String,
    pub timestamp_ms: u64,
    #[serde(rename = "CIDEr-D")]
    pub cider_d: f64,
    pub report: Box<RawValue>,
}

struct Inner {
    records: Vec<SubmissionRecord>,
    index: HashMap<String, usize>,
    next_id: u64,
    log: File,
}

impl Inner {
    fn append(&mut self, record: &SubmissionRecord) -> Result<(), ApiError> {
        let mut line = serde_json::to_string(record).map_err(|e| ApiError::Internal(e.to_string()))?;
        line.push('\n');
        self.log
            .write_all(line.as_bytes())
            .and_then(|_| self.log.sync_data())
            .map_err(|e| ApiError::Internal(format!("cannot write submission log: {e}")))
    }

    fn upsert(&mut self, record: SubmissionRecord) {
        match self.index.get(&record.id) {
            Some(&i) => self.records[i] = record,
            None => {
                self.index.insert(record.id.clone(), self.records.len());
                self.records.push(record);
            }
        }
    }

    fn used(&self, user: &str, split: &str, now_ms: u64, window_ms: u64) -> usize {
        self.records
            .iter()
            .filter(|r| r.user == user && r.split == split && r.timestamp_ms.saturating_add(window_ms) > now_ms)
            .count()
    }
}

pub struct SubmissionStore {
    path: PathBuf,
    inner: Mutex<Inner>,
}

fn log_error(path: &Path, message: impl Into<String>) -> ConfigError {
    ConfigError::Log { path: path.display().to_string(), message: message.into() }
}

impl SubmissionStore {
    /// Opens (creating if needed) the log at `path` and replays it. Records
    /// left queued by an interrupted run are marked rejected.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| log_error(&path, e.to_string()))?;
        }
        let mut records: Vec<SubmissionRecord> = Vec::new();
        let mut index = HashMap::new();
        let mut next_id = 1;
        if path.exists() {
            let file = File::open(&path).map_err(|e| log_error(&path, e.to_string()))?;
            let lines: Vec<String> =
                BufReader::new(file).lines().collect::<Result<_, _>>().map_err(|e| log_error(&path, e.to_string()))?;
            let count = lines.len();
            for (i, line) in lines.into_iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let record: SubmissionRecord = match serde_json::from_str(&line) {
                    Ok(r) => r,
                    // a torn final line from a crash mid-write
                    Err(_) if i + 1 == count => break,
                    Err(e) => return Err(log_error(&path, format!("line {}: {e}", i + 1))),
                };
                if let Ok(n) = record.id.parse::<u64>() {
                    next_id = next_id.max(n + 1);
                }
                match index.get(&record.id) {
                    Some(&j) => records[j] = record,
                    None => {
                        index.insert(record.id.clone(), records.len());
                        records.push(record);
                    }
                }
            }
        }
        let log = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| log_error(&path, e.to_string()))?;
        let mut inner = Inner { records, index, next_id, log };
        let interrupted: Vec<SubmissionRecord> =
            inner.records.iter().filter(|r| r.status == Status::Queued).cloned().collect();
        for mut r in interrupted {
            r.status = Status::Rejected;
            r.error = Some("scoring was interrupted by a server restart".into());
            inner.append(&r).map_err(|e| log_error(&path, e.to_string()))?;
            inner.upsert(r);
        }
        Ok(Self { path, inner: Mutex::new(inner) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Checks the quota and, if there is room, records a queued submission.
    /// The check and the insertion happen under one lock.
    pub fn reserve(
        &self,
        user: &str,
        split: &str,
        limit: usize,
        window_ms: u64,
        now_ms: u64,
    ) -> Result<SubmissionRecord, ApiError> {
        let mut inner = self.lock();
        if inner.used(user, split, now_ms, window_ms) >= limit {
            return Err(ApiError::QuotaExceeded { limit, window_secs: window_ms / 1000, split: split.to_string() });
        }
        let record = SubmissionRecord {
            id: format!("{:08}", inner.next_id),
            user: user.to_string(),
            split: split.to_string(),
            timestamp_ms: now_ms,
            status: Status::Queued,
            report: None,
            cider_d: None,
            violations: None,
            error: None,
        };
        inner.append(&record)?;
        inner.next_id += 1;
        inner.upsert(record.clone());
        Ok(record)
    }

    pub fn finish(&self, id: &str, outcome: Outcome) -> Result<SubmissionRecord, ApiError> {
        let mut inner = self.lock();
        let mut record = inner.index.get(id).map(|&i| inner.records[i].clone()).ok_or_else(|| ApiError::NotFound(id.into()))?;
        match outcome {
            Outcome::Scored { report, cider_d } => {
                record.status = Status::Scored;
                record.report = Some(report);
                record.cider_d = Some(cider_d);
            }
            Outcome::Invalid(v) => {
                record.status = Status::Rejected;
                record.violations = Some(v);
            }
            Outcome::Malformed(msg) => {
                record.status = Status::Rejected;
                record.error = Some(msg);
            }
        }
        inner.append(&record)?;
        inner.upsert(record.clone());
        Ok(record)
    }

    pub fn get(&self, id: &str) -> Option<SubmissionRecord> {
        let inner = self.lock();
        inner.index.get(id).map(|&i| inner.records[i].clone())
    }

    pub fn usage(&self, user: &str, split: &str, limit: usize, window_ms: u64, now_ms: u64) -> QuotaUsage {
        QuotaUsage { limit, used: self.lock().used(user, split, now_ms, window_ms) }
    }

    pub fn len(&self) -> usize {
        self.lock().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Best scored submission per user, ranked by CIDEr-D; ties go to the
    /// earlier submission.
    pub fn leaderboard(&self, split: &str) -> Vec<LeaderboardRow> {
        let inner = self.lock();
        let mut best: HashMap<&str, &SubmissionRecord> = HashMap::new();
        let better = |a: &SubmissionRecord, b: &SubmissionRecord| {
            let (sa, sb) = (a.cider_d.unwrap_or(f64::NEG_INFINITY), b.cider_d.unwrap_or(f64::NEG_INFINITY));
            sb.total_cmp(&sa).then(a.timestamp_ms.cmp(&b.timestamp_ms)).then(a.id.cmp(&b.id))
        };
        for r in inner.records.iter().filter(|r| r.split == split && r.status == Status::Scored) {
            let slot = best.entry(r.user.as_str()).or_insert(r);
            if better(r, slot).is_lt() {
                *slot = r;
            }
        }
        let mut rows: Vec<&SubmissionRecord> = best.into_values().collect();
        rows.sort_by(|a, b| better(a, b));
        rows.into_iter()
            .enumerate()
            .map(|(i, r)| LeaderboardRow {
                rank: i + 1,
                user: r.user.clone(),
                submission_id: r.id.clone(),
                timestamp_ms: r.timestamp_ms,
                cider_d: r.cider_d.unwrap_or(0.0),
                report: r.report.clone().expect("scored records carry a report"),
            })
            .collect()
    }
}
