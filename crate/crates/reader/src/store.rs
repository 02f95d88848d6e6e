//! Append-only JSONL store of reader submissions.
//!
//! A line is written and fsynced before the submission is acknowledged. A
//! torn final line (a crash mid-write, never acknowledged) is cut off when
//! the store is opened.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{ReaderError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SideScore {
    pub score: u8,
    #[serde(default)]
    pub unacceptable_slice: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preference {
    Middle,
    Right,
    None,
}

/// A stored submission, in screen terms (middle/right), never methods.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredRecord {
    pub record_id: String,
    /// 1 for the first submission of a (reader, case) pair.
    pub version: u32,
    pub case_id: String,
    pub reader_id: String,
    pub middle: SideScore,
    pub right: SideScore,
    pub preference: Option<Preference>,
    pub timestamp: String,
}

struct Inner {
    file: File,
    versions: HashMap<(String, String), u32>,
}

pub struct Store {
    path: PathBuf,
    inner: Mutex<Inner>,
}

fn read_records(path: &Path) -> Result<Vec<StoredRecord>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(ReaderError::Store(format!("{}: {e}", path.display()))),
    };
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| ReaderError::Store(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(e) if i + 1 == lines.len() => {
                log::warn!("{}: skipping torn last line: {e}", path.display());
            }
            Err(e) => {
                return Err(ReaderError::Store(format!("{} line {}: {e}", path.display(), i + 1)));
            }
        }
    }
    Ok(out)
}

impl Store {
    pub fn open(path: impl Into<PathBuf>) -> Result<Store> {
        let path = path.into();
        let existing = read_records(&path)?;
        let mut versions = HashMap::new();
        for r in &existing {
            let v = versions.entry((r.reader_id.clone(), r.case_id.clone())).or_insert(0);
            *v = (*v).max(r.version);
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| ReaderError::Store(format!("{}: {e}", dir.display())))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| ReaderError::Store(format!("{}: {e}", path.display())))?;
        // drop a torn tail; it was never acknowledged
        let bytes = std::fs::read(&path).map_err(|e| ReaderError::Store(format!("{}: {e}", path.display())))?;
        if !bytes.is_empty() && !bytes.ends_with(b"\n") {
            let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
            file.set_len(keep as u64).map_err(|e| ReaderError::Store(e.to_string()))?;
        }
        Ok(Store {
            path,
            inner: Mutex::new(Inner { file, versions }),
        })
    }

    /// Assigns the next version and id, appends the line and syncs it.
    pub fn append(
        &self,
        make: impl FnOnce(u32) -> StoredRecord,
        reader_id: &str,
        case_id: &str,
    ) -> Result<StoredRecord> {
        let mut inner = self.inner.lock().expect("store lock");
        let key = (reader_id.to_string(), case_id.to_string());
        let version = inner.versions.get(&key).copied().unwrap_or(0) + 1;
        let record = make(version);
        let mut line = serde_json::to_vec(&record).map_err(|e| ReaderError::Store(e.to_string()))?;
        line.push(b'\n');
        let io = |e: std::io::Error| ReaderError::Store(format!("{}: {e}", self.path.display()));
        inner.file.write_all(&line).map_err(io)?;
        inner.file.sync_data().map_err(io)?;
        inner.versions.insert(key, version);
        Ok(record)
    }

    /// Latest version per (reader, case), sorted by case then reader.
    pub fn latest(&self) -> Result<Vec<StoredRecord>> {
        let _guard = self.inner.lock().expect("store lock");
        let mut best: HashMap<(String, String), StoredRecord> = HashMap::new();
        for r in read_records(&self.path)? {
            let key = (r.reader_id.clone(), r.case_id.clone());
            match best.get(&key) {
                Some(old) if old.version >= r.version => {}
                _ => {
                    best.insert(key, r);
                }
            }
        }
        let mut out: Vec<StoredRecord> = best.into_values().collect();
        out.sort_by(|a, b| (&a.case_id, &a.reader_id).cmp(&(&b.case_id, &b.reader_id)));
        Ok(out)
    }
}
