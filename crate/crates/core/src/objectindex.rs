//! Persistent identifiers for data objects and their storage locations.
//!
//! The index never opens the objects it describes. Size and md5 are the
//! only attributes treated as authoritative; urls are opaque strings that
//! can be replaced (for instance when data moves to an archive) while the
//! identifier stays put.

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;

use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::canon;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hashes {
    pub md5: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexRecord {
    pub guid: String,
    pub rev: String,
    pub file_name: String,
    pub size: u64,
    pub hashes: Hashes,
    pub urls: Vec<String>,
    pub created: DateTime<Utc>,
    pub updated: DateTime<Utc>,
}

/// Body of a registration request.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct NewObject {
    pub file_name: String,
    pub size: i64,
    pub hashes: Hashes,
    #[serde(default)]
    pub urls: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checksum {
    #[serde(rename = "type")]
    pub kind: String,
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessUrl {
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessMethod {
    #[serde(rename = "type")]
    pub kind: String,
    pub access_url: AccessUrl,
}

/// DRS object view of an [`IndexRecord`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrsObject {
    pub id: String,
    pub self_uri: String,
    pub size: u64,
    pub created_time: DateTime<Utc>,
    pub updated_time: DateTime<Utc>,
    pub checksums: Vec<Checksum>,
    pub name: String,
    pub version: String,
    pub access_methods: Vec<AccessMethod>,
}

/// Scheme of an opaque location string; `https` when there is none.
pub fn url_scheme(url: &str) -> &str {
    match url.find("://") {
        Some(i) if i > 0 => &url[..i],
        _ => "https",
    }
}

impl IndexRecord {
    pub fn to_drs(&self, host: &str) -> DrsObject {
        DrsObject {
            id: self.guid.clone(),
            self_uri: format!("drs://{host}/{}", self.guid),
            size: self.size,
            created_time: self.created,
            updated_time: self.updated,
            checksums: vec![Checksum {
                kind: "md5".into(),
                checksum: self.hashes.md5.clone(),
            }],
            name: self.file_name.clone(),
            version: self.rev.clone(),
            access_methods: self
                .urls
                .iter()
                .map(|u| AccessMethod {
                    kind: url_scheme(u).to_owned(),
                    access_url: AccessUrl { url: u.clone() },
                })
                .collect(),
        }
    }
}

pub fn is_md5_hex(s: &str) -> bool {
    s.len() == 32 && s.bytes().all(|b| b.is_ascii_hexdigit())
}

fn new_rev(previous: Option<&str>) -> String {
    let mut rng = rand::thread_rng();
    loop {
        let rev = format!("{:08x}", rng.gen::<u32>());
        if Some(rev.as_str()) != previous {
            return rev;
        }
    }
}

/// Mint an opaque identifier, `prefix/uuid` when a prefix is configured.
pub fn mint_guid(prefix: Option<&str>) -> String {
    let id = uuid::Uuid::new_v4().to_string();
    match prefix {
        Some(p) if !p.is_empty() => format!("{p}/{id}"),
        _ => id,
    }
}

pub struct ObjectIndex {
    records: RwLock<HashMap<String, IndexRecord>>,
    guid_prefix: Option<String>,
    dir: Option<PathBuf>,
}

impl ObjectIndex {
    pub fn in_memory(guid_prefix: Option<String>) -> ObjectIndex {
        ObjectIndex {
            records: RwLock::new(HashMap::new()),
            guid_prefix,
            dir: None,
        }
    }

    /// Open (or create) an index persisted as one file per record in `dir`.
    pub fn open(dir: PathBuf, guid_prefix: Option<String>) -> Result<ObjectIndex> {
        fs::create_dir_all(&dir)?;
        let mut records = HashMap::new();
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let rec: IndexRecord = serde_json::from_slice(&fs::read(&path)?)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            records.insert(rec.guid.clone(), rec);
        }
        Ok(ObjectIndex {
            records: RwLock::new(records),
            guid_prefix,
            dir: Some(dir),
        })
    }

    fn file_for(&self, guid: &str) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join(format!("{}.json", hex::encode(guid.as_bytes()))))
    }

    fn persist(&self, rec: &IndexRecord) -> Result<()> {
        if let Some(path) = self.file_for(&rec.guid) {
            canon::write_atomic(&path, canon::to_string(rec).as_bytes())?;
        }
        Ok(())
    }

    pub fn register(&self, new: NewObject) -> Result<IndexRecord> {
        if new.size < 0 {
            return Err(Error::BadRequest(format!("size must be >= 0, got {}", new.size)));
        }
        if !is_md5_hex(&new.hashes.md5) {
            return Err(Error::BadRequest(format!(
                "md5 must be 32 hex characters, got {:?}",
                new.hashes.md5
            )));
        }
        let now = Utc::now();
        let mut records = self.records.write();
        let guid = loop {
            let g = mint_guid(self.guid_prefix.as_deref());
            if !records.contains_key(&g) {
                break g;
            }
        };
        let rec = IndexRecord {
            guid: guid.clone(),
            rev: new_rev(None),
            file_name: new.file_name,
            size: new.size as u64,
            hashes: Hashes {
                md5: new.hashes.md5.to_ascii_lowercase(),
            },
            urls: new.urls,
            created: now,
            updated: now,
        };
        self.persist(&rec)?;
        records.insert(guid, rec.clone());
        Ok(rec)
    }

    pub fn get(&self, guid: &str) -> Result<IndexRecord> {
        self.records
            .read()
            .get(guid)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("object {guid}")))
    }

    pub fn drs_object(&self, guid: &str, host: &str) -> Result<DrsObject> {
        Ok(self.get(guid)?.to_drs(host))
    }

    /// Replace the storage locations, guarded by the caller's view of the
    /// current revision.
    pub fn update_locations(&self, guid: &str, expected_rev: &str, urls: Vec<String>) -> Result<IndexRecord> {
        let mut records = self.records.write();
        let current = records
            .get(guid)
            .ok_or_else(|| Error::NotFound(format!("object {guid}")))?;
        if current.rev != expected_rev {
            return Err(Error::RevConflict {
                expected: expected_rev.to_owned(),
                current: current.rev.clone(),
            });
        }
        let mut next = current.clone();
        next.urls = urls;
        next.rev = new_rev(Some(&current.rev));
        next.updated = Utc::now().max(current.updated);
        self.persist(&next)?;
        records.insert(guid.to_owned(), next.clone());
        Ok(next)
    }

    pub fn delete(&self, guid: &str, expected_rev: &str) -> Result<()> {
        let mut records = self.records.write();
        let current = records
            .get(guid)
            .ok_or_else(|| Error::NotFound(format!("object {guid}")))?;
        if current.rev != expected_rev {
            return Err(Error::RevConflict {
                expected: expected_rev.to_owned(),
                current: current.rev.clone(),
            });
        }
        if let Some(path) = self.file_for(guid) {
            match fs::remove_file(path) {
                Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(e.into()),
                _ => {}
            }
        }
        records.remove(guid);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All records ordered by guid.
    pub fn snapshot(&self) -> Vec<IndexRecord> {
        let mut all: Vec<IndexRecord> = self.records.read().values().cloned().collect();
        all.sort_by(|a, b| a.guid.cmp(&b.guid));
        all
    }
}
