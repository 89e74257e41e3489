//! Append-only completion cache keyed by request fingerprint.
//!
//! On disk it is one JSON record per line. Later lines win when a
//! fingerprint repeats. All writes go through a single locked writer.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::io::IoError;

/// Environment variable naming the cache file.
pub const CACHE_ENV: &str = "LLMAEL_CACHE";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub fingerprint: String,
    pub provider: String,
    pub description: String,
}

#[derive(Debug, Default)]
pub struct CompletionCache {
    path: Option<PathBuf>,
    entries: Mutex<HashMap<String, CacheEntry>>,
    writer: Mutex<Option<File>>,
}

impl CompletionCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (creating if needed) a persistent cache file.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, IoError> {
        let path = path.as_ref().to_path_buf();
        let io_err = |source| IoError::Io {
            path: path.clone(),
            source,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(io_err)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(io_err)?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheEntry =
                    serde_json::from_str(&line).map_err(|e| IoError::MalformedLine {
                        line: i + 1,
                        content: line.clone(),
                        detail: e.to_string(),
                    })?;
                entries.insert(entry.fingerprint.clone(), entry);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err)?;
        Ok(CompletionCache {
            path: Some(path),
            entries: Mutex::new(entries),
            writer: Mutex::new(Some(file)),
        })
    }

    /// Opens the file named by `LLMAEL_CACHE`, or an in-memory cache.
    pub fn from_env() -> Result<Self, IoError> {
        match std::env::var(CACHE_ENV) {
            Ok(p) if !p.is_empty() => Self::open(p),
            _ => Ok(Self::in_memory()),
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, fingerprint: &str) -> Option<String> {
        let entries = self.entries.lock().unwrap_or_else(|p| p.into_inner());
        entries.get(fingerprint).map(|e| e.description.clone())
    }

    pub fn contains(&self, fingerprint: &str) -> bool {
        let entries = self.entries.lock().unwrap_or_else(|p| p.into_inner());
        entries.contains_key(fingerprint)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn put(&self, entry: CacheEntry) -> Result<(), IoError> {
        {
            let mut writer = self.writer.lock().unwrap_or_else(|p| p.into_inner());
            if let Some(file) = writer.as_mut() {
                let mut line = serde_json::to_string(&entry).expect("cache entry serializes");
                line.push('\n');
                file.write_all(line.as_bytes())
                    .and_then(|_| file.flush())
                    .map_err(|source| IoError::Io {
                        path: self.path.clone().unwrap_or_default(),
                        source,
                    })?;
            }
        }
        let mut entries = self.entries.lock().unwrap_or_else(|p| p.into_inner());
        entries.insert(entry.fingerprint.clone(), entry);
        Ok(())
    }
}
