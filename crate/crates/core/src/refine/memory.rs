use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::embed::{cosine, Embedder, HashEmbedder};
use crate::critics::{CriticReport, ScoreIndex};
use crate::program::parse_program;

const SCHEMA_VERSION: u32 = 1;

/// One (request, program, feedback) tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    /// Assigned by the store; 0 until stored.
    #[serde(default)]
    pub id: u64,
    pub request: String,
    pub program: String,
    #[serde(default)]
    pub feedback: Vec<CriticReport>,
    #[serde(default)]
    pub score: Option<ScoreIndex>,
    /// Unix time, milliseconds.
    pub created_at: u64,
}

impl InteractionRecord {
    pub fn new(request: impl Into<String>, program: impl Into<String>) -> Self {
        InteractionRecord {
            id: 0,
            request: request.into(),
            program: program.into(),
            feedback: Vec::new(),
            score: None,
            created_at: now_ms(),
        }
    }
}

pub(crate) fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("program does not parse and was not stored: {0}")]
    GenerationFailure(String),
    #[error("memory storage failure: {0}")]
    StorageFailure(String),
    #[error("memory log line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

#[derive(Serialize, Deserialize)]
struct LogLine {
    schema: u32,
    #[serde(flatten)]
    record: InteractionRecord,
    embedding: Vec<f64>,
}

struct Entry {
    record: InteractionRecord,
    embedding: Vec<f64>,
}

/// Interaction memory: records indexed by an embedding of their request,
/// optionally persisted to an append-only log. Readers share, writers are
/// exclusive.
pub struct MemoryStore {
    entries: RwLock<Vec<Entry>>,
    log: Option<(PathBuf, Mutex<File>)>,
    embedder: Box<dyn Embedder>,
}

impl MemoryStore {
    pub fn in_memory() -> Self {
        Self::with_embedder(Box::new(HashEmbedder::default()))
    }

    pub fn with_embedder(embedder: Box<dyn Embedder>) -> Self {
        MemoryStore {
            entries: RwLock::new(Vec::new()),
            log: None,
            embedder,
        }
    }

    /// Opens (or creates) a log file and reloads its records.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, MemoryError> {
        Self::open_with(path, Box::new(HashEmbedder::default()))
    }

    pub fn open_with(
        path: impl AsRef<Path>,
        embedder: Box<dyn Embedder>,
    ) -> Result<Self, MemoryError> {
        let path = path.as_ref().to_path_buf();
        let storage =
            |e: std::io::Error| MemoryError::StorageFailure(format!("{}: {e}", path.display()));
        let mut entries = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(storage)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(storage)?;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: LogLine =
                    serde_json::from_str(&line).map_err(|e| MemoryError::Corrupt {
                        line: i + 1,
                        message: e.to_string(),
                    })?;
                if parsed.schema != SCHEMA_VERSION {
                    return Err(MemoryError::Corrupt {
                        line: i + 1,
                        message: format!("unsupported schema {}", parsed.schema),
                    });
                }
                entries.push(Entry {
                    record: parsed.record,
                    embedding: parsed.embedding,
                });
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(storage)?;
        Ok(MemoryStore {
            entries: RwLock::new(entries),
            log: Some((path, Mutex::new(file))),
            embedder,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.log.as_ref().map(|(p, _)| p.as_path())
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("memory lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stores a record whose program parses; returns its id (1, 2, ...).
    pub fn put(&self, mut record: InteractionRecord) -> Result<u64, MemoryError> {
        parse_program(&record.program)
            .map_err(|e| MemoryError::GenerationFailure(e.to_string()))?;
        let embedding = self
            .embedder
            .embed(&record.request)
            .map_err(|e| MemoryError::StorageFailure(e.to_string()))?;
        let mut entries = self.entries.write().expect("memory lock");
        record.id = entries.last().map_or(1, |e| e.record.id + 1);
        if let Some((path, file)) = &self.log {
            let line = serde_json::to_string(&LogLine {
                schema: SCHEMA_VERSION,
                record: record.clone(),
                embedding: embedding.clone(),
            })
            .map_err(|e| MemoryError::StorageFailure(e.to_string()))?;
            let mut f = file.lock().expect("log lock");
            writeln!(f, "{line}")
                .and_then(|_| f.flush())
                .map_err(|e| MemoryError::StorageFailure(format!("{}: {e}", path.display())))?;
        }
        let id = record.id;
        entries.push(Entry { record, embedding });
        Ok(id)
    }

    pub fn get(&self, id: u64) -> Option<InteractionRecord> {
        let entries = self.entries.read().expect("memory lock");
        entries
            .iter()
            .find(|e| e.record.id == id)
            .map(|e| e.record.clone())
    }

    pub fn all(&self) -> Vec<InteractionRecord> {
        let entries = self.entries.read().expect("memory lock");
        entries.iter().map(|e| e.record.clone()).collect()
    }

    /// Top-`k` records by cosine similarity to `query`, newer first on ties.
    pub fn retrieve(&self, query: &str, k: usize) -> Vec<InteractionRecord> {
        self.retrieve_scored(query, k)
            .into_iter()
            .map(|(r, _)| r)
            .collect()
    }

    pub fn retrieve_scored(&self, query: &str, k: usize) -> Vec<(InteractionRecord, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let Ok(q) = self.embedder.embed(query) else {
            return Vec::new();
        };
        let entries = self.entries.read().expect("memory lock");
        let mut scored: Vec<(f64, &Entry)> = entries
            .iter()
            .map(|e| (cosine(&q, &e.embedding), e))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.record.id.cmp(&a.1.record.id)));
        scored
            .into_iter()
            .take(k)
            .map(|(s, e)| (e.record.clone(), s))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(req: &str) -> InteractionRecord {
        InteractionRecord::new(req, "move_to(0.3, 0, 0.3)")
    }

    #[test]
    fn ids_are_monotone_from_one() {
        let m = MemoryStore::in_memory();
        assert_eq!(m.put(rec("a")).unwrap(), 1);
        assert_eq!(m.put(rec("b")).unwrap(), 2);
    }

    #[test]
    fn unparsable_program_rejected() {
        let m = MemoryStore::in_memory();
        let bad = InteractionRecord::new("x", "fly_to_the_moon()");
        assert!(matches!(m.put(bad), Err(MemoryError::GenerationFailure(_))));
        assert!(m.is_empty());
    }

    #[test]
    fn exact_request_ranks_first() {
        let m = MemoryStore::in_memory();
        for r in [
            "sort the apples",
            "recycle the cans",
            "set the breakfast table",
        ] {
            m.put(rec(r)).unwrap();
        }
        let top = m.retrieve_scored("recycle the cans", 1);
        assert_eq!(top[0].0.request, "recycle the cans");
        assert!((top[0].1 - 1.0).abs() < 1e-12);
        assert!(m.retrieve("anything", 0).is_empty());
        assert_eq!(m.retrieve("anything", 10).len(), 3);
        assert!(MemoryStore::in_memory().retrieve("x", 3).is_empty());
    }

    #[test]
    fn ties_prefer_newer() {
        let m = MemoryStore::in_memory();
        m.put(rec("same words")).unwrap();
        m.put(rec("same words")).unwrap();
        assert_eq!(m.retrieve("same words", 2)[0].id, 2);
    }

    #[test]
    fn log_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("memory.jsonl");
        {
            let m = MemoryStore::open(&path).unwrap();
            m.put(rec("first")).unwrap();
            m.put(rec("second")).unwrap();
        }
        let m = MemoryStore::open(&path).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.put(rec("third")).unwrap(), 3);
        assert_eq!(m.retrieve("second", 1)[0].id, 2);
    }
}
