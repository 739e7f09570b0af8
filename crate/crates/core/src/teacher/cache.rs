//! Append-only store of teacher verdicts.
//!
//! Keys are `(doc id, label id, prompt hash)`. The first verdict stored for a
//! key is final; later inserts return it unchanged. When backed by a file,
//! every new verdict is appended as one JSON line.

use std::collections::{BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ParseStatus, Relevance, TeacherError, Verdict};
use crate::corpus::{DocId, LabelId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey {
    pub doc_id: DocId,
    pub label_id: LabelId,
    pub prompt_hash: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheRecord {
    doc_id: DocId,
    label_id: LabelId,
    prompt_hash: String,
    verdict: Relevance,
    parse_status: ParseStatus,
    raw: String,
}

impl CacheRecord {
    fn new(key: &CacheKey, v: &Verdict) -> Self {
        Self {
            doc_id: key.doc_id,
            label_id: key.label_id,
            prompt_hash: format!("{:016x}", key.prompt_hash),
            verdict: v.value,
            parse_status: v.parse_status,
            raw: v.raw.clone(),
        }
    }

    fn into_entry(self, line: usize) -> Result<(CacheKey, Verdict), TeacherError> {
        let prompt_hash = u64::from_str_radix(&self.prompt_hash, 16).map_err(|_| TeacherError::CorruptCache {
            line,
            reason: format!("bad prompt hash {:?}", self.prompt_hash),
        })?;
        Ok((
            CacheKey {
                doc_id: self.doc_id,
                label_id: self.label_id,
                prompt_hash,
            },
            Verdict {
                value: self.verdict,
                parse_status: self.parse_status,
                raw: self.raw,
            },
        ))
    }
}

/// Counters since the cache was opened.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub entries: usize,
    /// Lookups answered from the cache.
    pub hits: u64,
    /// Verdicts computed by a teacher and inserted.
    pub computed: u64,
    /// Computed verdicts whose reply could not be parsed.
    pub unparseable: u64,
}

#[derive(Debug, Default)]
pub struct JudgmentCache {
    map: Mutex<HashMap<CacheKey, Verdict>>,
    writer: Option<Mutex<BufWriter<File>>>,
    path: Option<PathBuf>,
    hits: AtomicU64,
    computed: AtomicU64,
    unparseable: AtomicU64,
}

fn read_records(path: &Path) -> Result<Vec<(CacheKey, Verdict)>, TeacherError> {
    let file = File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CacheRecord = serde_json::from_str(&line).map_err(|e| TeacherError::CorruptCache {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(rec.into_entry(i + 1)?);
    }
    Ok(out)
}

impl JudgmentCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (creating if needed) a file-backed cache and loads its records.
    pub fn open(path: &Path) -> Result<Self, TeacherError> {
        let mut map = HashMap::new();
        if path.exists() {
            for (k, v) in read_records(path)? {
                map.entry(k).or_insert(v);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            map: Mutex::new(map),
            writer: Some(Mutex::new(BufWriter::new(file))),
            path: Some(path.to_path_buf()),
            hits: AtomicU64::new(0),
            computed: AtomicU64::new(0),
            unparseable: AtomicU64::new(0),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn lookup(&self, key: &CacheKey) -> Option<Verdict> {
        let hit = self.map.lock().expect("cache lock").get(key).cloned();
        if hit.is_some() {
            self.hits.fetch_add(1, Ordering::Relaxed);
        }
        hit
    }

    /// Peeks without touching the hit counter.
    pub fn peek(&self, key: &CacheKey) -> Option<Verdict> {
        self.map.lock().expect("cache lock").get(key).cloned()
    }

    /// Stores a freshly computed verdict unless the key is already present,
    /// and returns whichever verdict is stored.
    pub fn insert(&self, key: CacheKey, verdict: Verdict) -> Result<Verdict, TeacherError> {
        let mut map = self.map.lock().expect("cache lock");
        if let Some(existing) = map.get(&key) {
            return Ok(existing.clone());
        }
        self.computed.fetch_add(1, Ordering::Relaxed);
        if verdict.parse_status == ParseStatus::Unparseable {
            self.unparseable.fetch_add(1, Ordering::Relaxed);
        }
        if let Some(w) = &self.writer {
            let line = serde_json::to_string(&CacheRecord::new(&key, &verdict)).expect("cache records serialize");
            let mut w = w.lock().expect("cache writer lock");
            writeln!(w, "{line}")?;
        }
        map.insert(key, verdict.clone());
        Ok(verdict)
    }

    pub fn flush(&self) -> Result<(), TeacherError> {
        if let Some(w) = &self.writer {
            w.lock().expect("cache writer lock").flush()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.map.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            entries: self.len(),
            hits: self.hits.load(Ordering::Relaxed),
            computed: self.computed.load(Ordering::Relaxed),
            unparseable: self.unparseable.load(Ordering::Relaxed),
        }
    }
}

impl Drop for JudgmentCache {
    fn drop(&mut self) {
        if let Err(e) = self.flush() {
            log::error!("failed to flush judgment cache: {e}");
        }
    }
}

/// Content summary of a cache file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CacheSummary {
    pub records: usize,
    pub distinct_keys: usize,
    pub relevant: usize,
    pub not_relevant: usize,
    pub unparseable: usize,
    pub documents: usize,
    pub labels: usize,
    pub prompt_hashes: usize,
}

pub fn summarize_cache_file(path: &Path) -> Result<CacheSummary, TeacherError> {
    if !path.exists() {
        return Ok(CacheSummary::default());
    }
    let records = read_records(path)?;
    let mut keys = HashMap::new();
    for (k, v) in &records {
        keys.entry(*k).or_insert(v);
    }
    let mut s = CacheSummary {
        records: records.len(),
        distinct_keys: keys.len(),
        ..Default::default()
    };
    let mut docs = BTreeSet::new();
    let mut labels = BTreeSet::new();
    let mut hashes = BTreeSet::new();
    for (k, v) in keys {
        docs.insert(k.doc_id);
        labels.insert(k.label_id);
        hashes.insert(k.prompt_hash);
        match v.value {
            Relevance::Relevant => s.relevant += 1,
            Relevance::NotRelevant => s.not_relevant += 1,
        }
        if v.parse_status == ParseStatus::Unparseable {
            s.unparseable += 1;
        }
    }
    s.documents = docs.len();
    s.labels = labels.len();
    s.prompt_hashes = hashes.len();
    Ok(s)
}
