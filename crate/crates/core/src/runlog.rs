//! Append-only JSONL run log and a content-addressed artifact store.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::wire::blob_hash;
use crate::error::{Error, Result};
use crate::image::{Image, ObjectMask};

pub fn now_ts() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Micros, true)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Decomposer,
    DecisionMaker,
    Executor,
    Verifier,
    Planner,
    Operator,
}

/// One agent exchange.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub role: Role,
    pub prompt: String,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Artifact hashes produced by this exchange.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub artifacts: Vec<String>,
    pub ts: String,
}

impl TranscriptEntry {
    pub fn new(role: Role, prompt: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            role,
            prompt: prompt.into(),
            response: response.into(),
            verdict: None,
            seed: None,
            artifacts: vec![],
            ts: now_ts(),
        }
    }

    pub fn with_verdict(mut self, v: impl Into<String>) -> Self {
        self.verdict = Some(v.into());
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_artifact(mut self, hash: impl Into<String>) -> Self {
        self.artifacts.push(hash.into());
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub seq: u64,
    pub ts: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtask: Option<String>,
    pub data: Value,
}

/// Removes every `ts` field, recursively, for timestamp-insensitive comparison.
pub fn strip_timestamps(v: &Value) -> Value {
    match v {
        Value::Object(map) => Value::Object(
            map.iter()
                .filter(|(k, _)| k.as_str() != "ts")
                .map(|(k, v)| (k.clone(), strip_timestamps(v)))
                .collect(),
        ),
        Value::Array(items) => Value::Array(items.iter().map(strip_timestamps).collect()),
        other => other.clone(),
    }
}

struct LogInner {
    events: Vec<LogEvent>,
    file: Option<File>,
}

/// Append-only event log, optionally mirrored to a JSONL file.
pub struct RunLog {
    inner: Mutex<LogInner>,
}

impl RunLog {
    pub fn in_memory() -> Self {
        Self {
            inner: Mutex::new(LogInner {
                events: vec![],
                file: None,
            }),
        }
    }

    /// Opens (or creates) a JSONL log, loading existing events.
    pub fn open(path: &Path) -> Result<Self> {
        let mut events = Vec::new();
        if path.exists() {
            for line in BufReader::new(File::open(path)?).lines() {
                let line = line?;
                if !line.trim().is_empty() {
                    events.push(serde_json::from_str(&line)?);
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            inner: Mutex::new(LogInner {
                events,
                file: Some(file),
            }),
        })
    }

    pub fn append(&self, kind: &str, subtask: Option<&str>, data: Value) -> Result<u64> {
        let mut inner = self.inner.lock().expect("run log lock");
        let seq = inner.events.len() as u64;
        let ev = LogEvent {
            seq,
            ts: now_ts(),
            kind: kind.to_string(),
            subtask: subtask.map(str::to_string),
            data,
        };
        if let Some(f) = inner.file.as_mut() {
            let mut line = serde_json::to_vec(&ev)?;
            line.push(b'\n');
            f.write_all(&line)?;
            f.flush()?;
        }
        inner.events.push(ev);
        Ok(seq)
    }

    pub fn append_transcript(&self, subtask: Option<&str>, entries: &[TranscriptEntry]) -> Result<()> {
        for e in entries {
            self.append("transcript", subtask, serde_json::to_value(e)?)?;
        }
        Ok(())
    }

    pub fn events(&self) -> Vec<LogEvent> {
        self.inner.lock().expect("run log lock").events.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("run log lock").events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in self.events() {
            out.push_str(&serde_json::to_string(&e).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    /// Events with timestamps removed.
    pub fn comparable(&self) -> Vec<Value> {
        self.events()
            .iter()
            .map(|e| strip_timestamps(&serde_json::to_value(e).expect("event serializes")))
            .collect()
    }
}

/// Blobs keyed by the hex SHA-256 of their bytes. Backed by a directory or memory.
pub struct ArtifactStore {
    dir: Option<PathBuf>,
    mem: Mutex<BTreeMap<String, Vec<u8>>>,
}

fn valid_hash(h: &str) -> bool {
    h.len() == 64 && h.bytes().all(|b| b.is_ascii_hexdigit())
}

impl ArtifactStore {
    pub fn in_memory() -> Self {
        Self {
            dir: None,
            mem: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: Some(dir.to_path_buf()),
            mem: Mutex::new(BTreeMap::new()),
        })
    }

    fn path(&self, hash: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{hash}.png")))
    }

    pub fn put(&self, bytes: &[u8]) -> Result<String> {
        let hash = blob_hash(bytes);
        match self.path(&hash) {
            Some(p) => {
                if !p.exists() {
                    let tmp = p.with_extension("tmp");
                    fs::write(&tmp, bytes)?;
                    fs::rename(&tmp, &p)?;
                }
            }
            None => {
                self.mem
                    .lock()
                    .expect("artifact lock")
                    .entry(hash.clone())
                    .or_insert_with(|| bytes.to_vec());
            }
        }
        Ok(hash)
    }

    pub fn put_image(&self, image: &Image) -> Result<String> {
        self.put(&image.to_png())
    }

    pub fn put_mask(&self, mask: &ObjectMask) -> Result<String> {
        self.put(&mask.to_png())
    }

    pub fn contains(&self, hash: &str) -> bool {
        if !valid_hash(hash) {
            return false;
        }
        match self.path(hash) {
            Some(p) => p.exists(),
            None => self.mem.lock().expect("artifact lock").contains_key(hash),
        }
    }

    pub fn get(&self, hash: &str) -> Result<Vec<u8>> {
        if !valid_hash(hash) {
            return Err(Error::MissingArtifact(hash.to_string()));
        }
        match self.path(hash) {
            Some(p) => fs::read(&p).map_err(|_| Error::MissingArtifact(hash.to_string())),
            None => self
                .mem
                .lock()
                .expect("artifact lock")
                .get(hash)
                .cloned()
                .ok_or_else(|| Error::MissingArtifact(hash.to_string())),
        }
    }

    pub fn get_image(&self, hash: &str) -> Result<Image> {
        Image::from_png(&self.get(hash)?)
    }

    pub fn get_mask(&self, hash: &str) -> Result<ObjectMask> {
        ObjectMask::from_png(&self.get(hash)?)
    }

    pub fn list(&self) -> Result<Vec<String>> {
        match &self.dir {
            Some(d) => {
                let mut v: Vec<String> = fs::read_dir(d)?
                    .filter_map(|e| e.ok())
                    .filter_map(|e| {
                        let name = e.file_name().to_string_lossy().to_string();
                        name.strip_suffix(".png").map(str::to_string)
                    })
                    .filter(|h| valid_hash(h))
                    .collect();
                v.sort();
                Ok(v)
            }
            None => Ok(self.mem.lock().expect("artifact lock").keys().cloned().collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_persists_and_resumes_sequence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runlog.jsonl");
        {
            let log = RunLog::open(&path).unwrap();
            log.append("a", None, serde_json::json!({"x": 1})).unwrap();
            log.append("b", Some("s"), Value::Null).unwrap();
        }
        let log = RunLog::open(&path).unwrap();
        assert_eq!(log.len(), 2);
        assert_eq!(log.append("c", None, Value::Null).unwrap(), 2);
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn strip_removes_nested_ts() {
        let v = serde_json::json!({"ts": 1, "a": [{"ts": 2, "b": 3}]});
        assert_eq!(strip_timestamps(&v), serde_json::json!({"a": [{"b": 3}]}));
    }

    #[test]
    fn store_is_content_addressed() {
        let dir = tempfile::tempdir().unwrap();
        for store in [ArtifactStore::in_memory(), ArtifactStore::open(dir.path()).unwrap()] {
            let img = Image::filled(3, 2, [1, 2, 3]);
            let h = store.put_image(&img).unwrap();
            assert_eq!(h, blob_hash(&img.to_png()));
            assert_eq!(store.put_image(&img).unwrap(), h);
            assert_eq!(store.get_image(&h).unwrap(), img);
            assert!(store.contains(&h));
            assert_eq!(store.list().unwrap(), vec![h]);
            assert!(matches!(store.get(&"0".repeat(64)), Err(Error::MissingArtifact(_))));
            assert!(!store.contains("../etc/passwd"));
        }
    }
}
