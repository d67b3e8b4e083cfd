//! The backing key-value store, with an optional append-only log.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::StoreError;
use crate::version::{Key, Version};

/// One version per key, merged with [`Version::resolve`] on every put, so
/// the final state does not depend on put order.
#[derive(Debug, Default)]
pub struct Store {
    data: BTreeMap<Key, Version>,
    log: Option<BufWriter<File>>,
}

impl Store {
    pub fn new() -> Self {
        Store::default()
    }

    /// Opens (or creates) a store backed by the log at `path`, replaying any
    /// existing records first.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref();
        let mut store = Store::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let v: Version = serde_json::from_str(&line).map_err(|source| StoreError::Corrupt { line: i + 1, source })?;
                store.apply(v);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        store.log = Some(BufWriter::new(file));
        Ok(store)
    }

    fn apply(&mut self, v: Version) {
        let merged = match self.data.get(&v.key) {
            Some(cur) => cur.resolve(&v).expect("same key"),
            None => v,
        };
        self.data.insert(merged.key.clone(), merged);
    }

    pub fn put(&mut self, v: Version) -> Result<(), StoreError> {
        if let Some(log) = self.log.as_mut() {
            serde_json::to_writer(&mut *log, &v).map_err(std::io::Error::from)?;
            log.write_all(b"\n")?;
            log.flush()?;
        }
        self.apply(v);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<&Version, StoreError> {
        self.data.get(key).ok_or_else(|| StoreError::NotFound(key.to_owned()))
    }

    pub fn try_get(&self, key: &str) -> Option<&Version> {
        self.data.get(key)
    }

    pub fn snapshot(&self) -> BTreeMap<Key, Version> {
        self.data.clone()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}
