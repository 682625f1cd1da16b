//! Semi-structured metadata keyed by GUID.
//!
//! Documents are schema-free. Queries are conjunctions of exact scalar
//! matches on dotted paths.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::canon;
use crate::error::{Error, Result};

pub const MAX_DOC_BYTES: usize = 1024 * 1024;
pub const MAX_LIMIT: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetadataEntry {
    pub guid: String,
    pub doc: Value,
    pub updated: DateTime<Utc>,
}

/// One conjunct: the value at `path` must equal `value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaFilter {
    pub path: String,
    pub value: Value,
}

impl MetaFilter {
    pub fn new(path: impl Into<String>, value: impl Into<Value>) -> MetaFilter {
        MetaFilter {
            path: path.into(),
            value: value.into(),
        }
    }

    /// Parse the `path=value` wire form. The value is read as a JSON scalar
    /// when it parses as one, otherwise as a bare string.
    pub fn parse(s: &str) -> Result<MetaFilter> {
        let (path, raw) = s
            .split_once('=')
            .ok_or_else(|| Error::BadRequest(format!("filter {s:?} is not path=value")))?;
        let value = match serde_json::from_str::<Value>(raw) {
            Ok(v) if canon::is_scalar(&v) => v,
            _ => Value::String(raw.to_owned()),
        };
        Ok(MetaFilter::new(path, value))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QueryHits {
    Guids(Vec<String>),
    Entries(Vec<MetadataEntry>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaQueryResult {
    pub total: usize,
    pub results: QueryHits,
}

fn split_path(path: &str) -> Result<Vec<&str>> {
    let segs: Vec<&str> = path.split('.').collect();
    if path.is_empty() || segs.iter().any(|s| s.is_empty()) {
        return Err(Error::BadRequest(format!("malformed path {path:?}")));
    }
    Ok(segs)
}

/// Walk `segs` down `doc`. Map segments are keys; on arrays a segment must
/// be a decimal index.
pub fn resolve<'a>(doc: &'a Value, segs: &[&str]) -> Option<&'a Value> {
    segs.iter().try_fold(doc, |cur, seg| match cur {
        Value::Object(m) => m.get(*seg),
        Value::Array(items) => seg.parse::<usize>().ok().and_then(|i| items.get(i)),
        _ => None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PutMode {
    Upsert,
    /// Fail with a conflict when the guid is taken.
    Create,
    /// Fail with not_found when the guid is absent.
    Replace,
}

pub struct MetaStore {
    entries: RwLock<BTreeMap<String, MetadataEntry>>,
    dir: Option<PathBuf>,
}

impl MetaStore {
    pub fn in_memory() -> MetaStore {
        MetaStore {
            entries: RwLock::new(BTreeMap::new()),
            dir: None,
        }
    }

    pub fn open(dir: PathBuf) -> Result<MetaStore> {
        fs::create_dir_all(&dir)?;
        let mut entries = BTreeMap::new();
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let e: MetadataEntry = serde_json::from_slice(&fs::read(&path)?)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            entries.insert(e.guid.clone(), e);
        }
        Ok(MetaStore {
            entries: RwLock::new(entries),
            dir: Some(dir),
        })
    }

    fn file_for(&self, guid: &str) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join(format!("{}.json", hex::encode(guid.as_bytes()))))
    }

    /// Insert or fully replace the document under `guid`.
    pub fn put(&self, guid: &str, doc: Value) -> Result<MetadataEntry> {
        self.put_with(guid, doc, PutMode::Upsert)
    }

    pub fn put_with(&self, guid: &str, doc: Value, mode: PutMode) -> Result<MetadataEntry> {
        if guid.is_empty() {
            return Err(Error::BadRequest("empty guid".into()));
        }
        let size = canon::value_to_string(&doc).len();
        if size > MAX_DOC_BYTES {
            return Err(Error::BadRequest(format!(
                "document is {size} bytes, the limit is {MAX_DOC_BYTES}"
            )));
        }
        let entry = MetadataEntry {
            guid: guid.to_owned(),
            doc,
            updated: Utc::now(),
        };
        let mut entries = self.entries.write();
        match (mode, entries.contains_key(guid)) {
            (PutMode::Create, true) => return Err(Error::Conflict(format!("metadata {guid} already exists"))),
            (PutMode::Replace, false) => return Err(Error::NotFound(format!("metadata {guid}"))),
            _ => {}
        }
        if let Some(path) = self.file_for(guid) {
            canon::write_atomic(&path, canon::to_string(&entry).as_bytes())?;
        }
        entries.insert(guid.to_owned(), entry.clone());
        Ok(entry)
    }

    pub fn get(&self, guid: &str) -> Result<MetadataEntry> {
        self.entries
            .read()
            .get(guid)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("metadata {guid}")))
    }

    pub fn delete(&self, guid: &str) -> Result<()> {
        let mut entries = self.entries.write();
        if !entries.contains_key(guid) {
            return Err(Error::NotFound(format!("metadata {guid}")));
        }
        if let Some(path) = self.file_for(guid) {
            match fs::remove_file(path) {
                Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(e.into()),
                _ => {}
            }
        }
        entries.remove(guid);
        Ok(())
    }

    pub fn query(
        &self,
        filters: &[MetaFilter],
        limit: usize,
        offset: usize,
        return_docs: bool,
    ) -> Result<MetaQueryResult> {
        if limit > MAX_LIMIT {
            return Err(Error::BadRequest(format!("limit {limit} exceeds {MAX_LIMIT}")));
        }
        let compiled = filters
            .iter()
            .map(|f| {
                if !canon::is_scalar(&f.value) {
                    return Err(Error::BadRequest(format!(
                        "filter value for {:?} must be a scalar",
                        f.path
                    )));
                }
                Ok((split_path(&f.path)?, &f.value))
            })
            .collect::<Result<Vec<_>>>()?;

        let entries = self.entries.read();
        let matching = entries.values().filter(|e| {
            compiled.iter().all(|(segs, want)| {
                resolve(&e.doc, segs).is_some_and(|got| canon::is_scalar(got) && canon::scalar_eq(got, want))
            })
        });
        let mut total = 0;
        let mut page = Vec::new();
        for (i, e) in matching.enumerate() {
            total += 1;
            if i >= offset && page.len() < limit {
                page.push(e);
            }
        }
        let results = if return_docs {
            QueryHits::Entries(page.into_iter().cloned().collect())
        } else {
            QueryHits::Guids(page.into_iter().map(|e| e.guid.clone()).collect())
        };
        Ok(MetaQueryResult { total, results })
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Vec<MetadataEntry> {
        self.entries.read().values().cloned().collect()
    }
}
