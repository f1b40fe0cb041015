//! Append-only encode cache, one JSON record per line.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{EncodeRequest, EncodeResult};
use crate::error::{Error, Result};
use crate::types::{MetricKind, RateControlMode};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    pub clip_id: String,
    pub encoder_id: String,
    pub mode: RateControlMode,
    pub value: u32,
    /// k rounded to three decimals, in thousandths.
    pub k_milli: i64,
    pub tune: MetricKind,
}

impl CacheKey {
    pub fn new(request: &EncodeRequest, encoder_id: &str) -> Self {
        CacheKey {
            clip_id: request.clip.id.clone(),
            encoder_id: encoder_id.to_string(),
            mode: request.op.mode,
            value: request.op.value,
            k_milli: (request.k * 1000.0).round() as i64,
            tune: request.tune,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: CacheKey,
    pub value: EncodeResult,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

pub struct EncodeCache {
    path: Option<PathBuf>,
    records: RwLock<HashMap<CacheKey, EncodeResult>>,
    writer: Mutex<Option<File>>,
    corrupt_lines: usize,
}

impl EncodeCache {
    pub fn in_memory() -> Self {
        EncodeCache {
            path: None,
            records: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
            corrupt_lines: 0,
        }
    }

    /// Loads every readable record and opens the file for appending.
    /// Unparseable lines are skipped with a warning.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut records = HashMap::new();
        let mut corrupt_lines = 0;
        if path.exists() {
            let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheRecord>(&line) {
                    Ok(rec) => {
                        records.entry(rec.key).or_insert(rec.value);
                    }
                    Err(err) => {
                        corrupt_lines += 1;
                        log::warn!("{}:{}: skipping corrupt cache record: {err}", path.display(), n + 1);
                    }
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(EncodeCache {
            path: Some(path),
            records: RwLock::new(records),
            writer: Mutex::new(Some(file)),
            corrupt_lines,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn corrupt_lines(&self) -> usize {
        self.corrupt_lines
    }

    pub fn len(&self) -> usize {
        self.records.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lookup(&self, key: &CacheKey) -> Option<EncodeResult> {
        self.records.read().unwrap().get(key).cloned()
    }

    /// Appends a record. Returns false, leaving the store untouched, when
    /// the key is already present.
    pub fn store(&self, key: CacheKey, value: EncodeResult) -> Result<bool> {
        let mut writer = self.writer.lock().unwrap();
        if self.records.read().unwrap().contains_key(&key) {
            log::warn!("cache already holds {key:?}; keeping the first record");
            return Ok(false);
        }
        if let Some(file) = writer.as_mut() {
            let timestamp = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            let record = CacheRecord {
                key: key.clone(),
                value: value.clone(),
                timestamp,
            };
            let mut line = serde_json::to_string(&record)?;
            line.push('\n');
            let path = self.path.as_deref().unwrap_or(Path::new("<cache>"));
            file.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
            file.flush().map_err(|e| Error::io(path, e))?;
        }
        self.records.write().unwrap().insert(key, value);
        Ok(true)
    }
}
