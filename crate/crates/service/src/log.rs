//! Append-only engagement log: a JSONL file with a format header, one
//! record per line, timestamps non-decreasing.
//!
//! Each append is a single `write` of a complete line followed by a sync, so
//! a crash can only leave a trailing line without its newline. Such a line
//! is ignored on read and cut off when the log is reopened for writing.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use inciplan::domain::{EngagementRecord, Minutes};
use inciplan::ingest::feeds::jsonl_header;

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("engagement log {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("engagement log {path} line {line}: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
    #[error("engagement at {timestamp} is earlier than the last logged record at {last}")]
    OutOfOrder { timestamp: Minutes, last: Minutes },
}

struct Parsed {
    records: Vec<EngagementRecord>,
    /// Byte length of the complete lines.
    complete: u64,
    has_header: bool,
}

fn parse(path: &Path, bytes: &[u8]) -> Result<Parsed, LogError> {
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let text = std::str::from_utf8(&bytes[..complete]).map_err(|e| LogError::Corrupt {
        path: path.to_path_buf(),
        line: 0,
        reason: e.to_string(),
    })?;
    let corrupt = |line: usize, reason: String| LogError::Corrupt {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    let has_header = match lines.next() {
        None => false,
        Some((_, h)) => {
            let v: serde_json::Value = serde_json::from_str(h).map_err(|e| corrupt(1, e.to_string()))?;
            if v.get("format_version").and_then(|x| x.as_u64()) != Some(1) {
                return Err(corrupt(1, "expected {\"format_version\":1}".into()));
            }
            true
        }
    };
    let mut records: Vec<EngagementRecord> = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let r: EngagementRecord = serde_json::from_str(line).map_err(|e| corrupt(n + 1, e.to_string()))?;
        if let Some(last) = records.last() {
            if r.timestamp < last.timestamp {
                return Err(corrupt(n + 1, format!("timestamp {} after {}", r.timestamp, last.timestamp)));
            }
        }
        records.push(r);
    }
    Ok(Parsed {
        records,
        complete: complete as u64,
        has_header,
    })
}

/// Every complete record of the log at `path`.
pub fn read_log(path: &Path) -> Result<Vec<EngagementRecord>, LogError> {
    let bytes = std::fs::read(path).map_err(|source| LogError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(parse(path, &bytes)?.records)
}

/// The single writer of one log file.
pub struct EngagementLog {
    path: PathBuf,
    file: File,
    records: Vec<EngagementRecord>,
}

impl EngagementLog {
    /// Opens or creates the log, dropping a partially written final line.
    pub fn open(path: &Path) -> Result<Self, LogError> {
        let io = |source| LogError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(path)
            .map_err(io)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(io)?;
        let parsed = parse(path, &bytes)?;
        if parsed.complete < bytes.len() as u64 {
            file.set_len(parsed.complete).map_err(io)?;
        }
        file.seek(SeekFrom::End(0)).map_err(io)?;
        if !parsed.has_header {
            file.write_all(format!("{}\n", jsonl_header()).as_bytes()).map_err(io)?;
            file.sync_data().map_err(io)?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            file,
            records: parsed.records,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn records(&self) -> &[EngagementRecord] {
        &self.records
    }

    pub fn last_timestamp(&self) -> Option<Minutes> {
        self.records.last().map(|r| r.timestamp)
    }

    /// Durably appends `record`; rejects timestamps before the last record.
    pub fn append(&mut self, record: EngagementRecord) -> Result<(), LogError> {
        if let Some(last) = self.last_timestamp() {
            if record.timestamp < last {
                return Err(LogError::OutOfOrder {
                    timestamp: record.timestamp,
                    last,
                });
            }
        }
        let mut line = serde_json::to_string(&record).expect("serializable");
        line.push('\n');
        let io = |source| LogError::Io {
            path: self.path.clone(),
            source,
        };
        self.file.write_all(line.as_bytes()).map_err(io)?;
        self.file.sync_data().map_err(io)?;
        self.records.push(record);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use inciplan::domain::{Actor, EngagementAction, PlanId};
    use inciplan::ingest::feeds::read_engagements;

    fn rec(t: Minutes, plan: &str, action: EngagementAction, actor: Actor) -> EngagementRecord {
        EngagementRecord {
            timestamp: t,
            plan_id: PlanId::new(plan),
            action,
            actor,
        }
    }

    #[test]
    fn append_then_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log").join("engagements.jsonl");
        let a = rec(100, "A", EngagementAction::Activate, Actor::Model);
        let b = rec(100, "E", EngagementAction::Override, Actor::Operator);
        {
            let mut log = EngagementLog::open(&path).unwrap();
            log.append(a.clone()).unwrap();
            log.append(b.clone()).unwrap();
        }
        assert_eq!(read_log(&path).unwrap(), vec![a.clone(), b.clone()]);
        // Same format as the feed reader expects.
        assert_eq!(read_engagements(&path).unwrap(), vec![a.clone(), b.clone()]);
        let log = EngagementLog::open(&path).unwrap();
        assert_eq!(log.records(), &[a, b]);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains(r#""actor":"model""#) && text.contains(r#""actor":"operator""#));
    }

    #[test]
    fn out_of_order_append_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut log = EngagementLog::open(&dir.path().join("e.jsonl")).unwrap();
        log.append(rec(50, "A", EngagementAction::Activate, Actor::Operator)).unwrap();
        let err = log.append(rec(45, "NULL", EngagementAction::Stop, Actor::Operator)).unwrap_err();
        assert!(matches!(err, LogError::OutOfOrder { timestamp: 45, last: 50 }));
        assert_eq!(log.records().len(), 1);
        assert_eq!(read_log(log.path()).unwrap().len(), 1);
    }

    #[test]
    fn partial_final_line_is_ignored_and_cut() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        let a = rec(10, "A", EngagementAction::Activate, Actor::Operator);
        EngagementLog::open(&path).unwrap().append(a.clone()).unwrap();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(br#"{"timestamp":20,"plan_id":"A","act"#).unwrap();
        drop(f);
        assert_eq!(read_log(&path).unwrap(), vec![a.clone()]);
        let mut log = EngagementLog::open(&path).unwrap();
        assert_eq!(log.records(), std::slice::from_ref(&a));
        let b = rec(30, "NULL", EngagementAction::Stop, Actor::Operator);
        log.append(b.clone()).unwrap();
        assert_eq!(read_log(&path).unwrap(), vec![a, b]);
    }

    #[test]
    fn corrupt_complete_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        std::fs::write(&path, format!("{}\nnot json\n", jsonl_header())).unwrap();
        assert!(matches!(EngagementLog::open(&path), Err(LogError::Corrupt { line: 2, .. })));
    }

    #[test]
    fn torn_header_is_rewritten() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        std::fs::write(&path, "{\"format_").unwrap();
        let mut log = EngagementLog::open(&path).unwrap();
        log.append(rec(5, "A", EngagementAction::Activate, Actor::Operator)).unwrap();
        assert_eq!(read_engagements(&path).unwrap().len(), 1);
    }
}
