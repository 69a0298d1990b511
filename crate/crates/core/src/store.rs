//! Keyed tables plus append-only logs, in memory or journaled to disk.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage io: {0}")]
    Io(#[from] io::Error),
    #[error("storage encoding: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Table {
    Reports,
    Votes,
    Profiles,
    Consensus,
    Jobs,
    Drafts,
    Dedup,
    Meta,
}

impl Table {
    pub const ALL: [Table; 8] = [
        Table::Reports,
        Table::Votes,
        Table::Profiles,
        Table::Consensus,
        Table::Jobs,
        Table::Drafts,
        Table::Dedup,
        Table::Meta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Table::Reports => "reports",
            Table::Votes => "votes",
            Table::Profiles => "profiles",
            Table::Consensus => "consensus",
            Table::Jobs => "jobs",
            Table::Drafts => "drafts",
            Table::Dedup => "dedup",
            Table::Meta => "meta",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Log {
    Transitions,
    Feedback,
}

impl Log {
    pub const ALL: [Log; 2] = [Log::Transitions, Log::Feedback];

    pub fn name(self) -> &'static str {
        match self {
            Log::Transitions => "transitions",
            Log::Feedback => "feedback",
        }
    }
}

pub trait Persistence: Send + Sync {
    fn put(&self, table: Table, key: &str, value: Value) -> Result<(), StoreError>;
    fn get(&self, table: Table, key: &str) -> Result<Option<Value>, StoreError>;
    /// All rows ordered by key.
    fn scan(&self, table: Table) -> Result<Vec<(String, Value)>, StoreError>;
    fn append(&self, log: Log, entry: Value) -> Result<(), StoreError>;
    fn read_log(&self, log: Log) -> Result<Vec<Value>, StoreError>;
}

/// Typed helpers over any [`Persistence`].
pub trait PersistenceExt: Persistence {
    fn put_as<T: Serialize>(&self, table: Table, key: &str, value: &T) -> Result<(), StoreError> {
        self.put(table, key, serde_json::to_value(value)?)
    }

    fn get_as<T: DeserializeOwned>(&self, table: Table, key: &str) -> Result<Option<T>, StoreError> {
        self.get(table, key)?
            .map(serde_json::from_value)
            .transpose()
            .map_err(Into::into)
    }

    fn scan_as<T: DeserializeOwned>(&self, table: Table) -> Result<Vec<T>, StoreError> {
        self.scan(table)?
            .into_iter()
            .map(|(_, v)| serde_json::from_value(v).map_err(Into::into))
            .collect()
    }

    fn append_as<T: Serialize>(&self, log: Log, entry: &T) -> Result<(), StoreError> {
        self.append(log, serde_json::to_value(entry)?)
    }

    fn read_log_as<T: DeserializeOwned>(&self, log: Log) -> Result<Vec<T>, StoreError> {
        self.read_log(log)?
            .into_iter()
            .map(|v| serde_json::from_value(v).map_err(Into::into))
            .collect()
    }
}

impl<P: Persistence + ?Sized> PersistenceExt for P {}

#[derive(Debug, Default)]
struct Tables {
    rows: BTreeMap<Table, BTreeMap<String, Value>>,
    logs: BTreeMap<Log, Vec<Value>>,
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    inner: Mutex<Tables>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Persistence for MemoryStore {
    fn put(&self, table: Table, key: &str, value: Value) -> Result<(), StoreError> {
        self.inner.lock().rows.entry(table).or_default().insert(key.to_owned(), value);
        Ok(())
    }

    fn get(&self, table: Table, key: &str) -> Result<Option<Value>, StoreError> {
        Ok(self.inner.lock().rows.get(&table).and_then(|t| t.get(key)).cloned())
    }

    fn scan(&self, table: Table) -> Result<Vec<(String, Value)>, StoreError> {
        Ok(self
            .inner
            .lock()
            .rows
            .get(&table)
            .map(|t| t.iter().map(|(k, v)| (k.clone(), v.clone())).collect())
            .unwrap_or_default())
    }

    fn append(&self, log: Log, entry: Value) -> Result<(), StoreError> {
        self.inner.lock().logs.entry(log).or_default().push(entry);
        Ok(())
    }

    fn read_log(&self, log: Log) -> Result<Vec<Value>, StoreError> {
        Ok(self.inner.lock().logs.get(&log).cloned().unwrap_or_default())
    }
}

#[derive(Serialize, Deserialize)]
struct Row {
    k: String,
    v: Value,
}

/// Every write is appended to `<dir>/<name>.jsonl` before it is visible;
/// opening replays the journals.
pub struct FileStore {
    dir: PathBuf,
    mem: MemoryStore,
    files: Mutex<BTreeMap<String, File>>,
}

impl FileStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mem = MemoryStore::new();
        for t in Table::ALL {
            for line in read_lines(&dir.join(format!("{}.jsonl", t.name())))? {
                let row: Row = serde_json::from_str(&line)?;
                mem.put(t, &row.k, row.v)?;
            }
        }
        for l in Log::ALL {
            for line in read_lines(&dir.join(format!("{}.jsonl", l.name())))? {
                mem.append(l, serde_json::from_str(&line)?)?;
            }
        }
        Ok(FileStore {
            dir,
            mem,
            files: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn write_line(&self, name: &str, line: String) -> Result<(), StoreError> {
        let mut files = self.files.lock();
        let f = match files.get_mut(name) {
            Some(f) => f,
            None => {
                let f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(self.dir.join(format!("{name}.jsonl")))?;
                files.entry(name.to_owned()).or_insert(f)
            }
        };
        f.write_all(format!("{line}\n").as_bytes())?;
        f.flush()?;
        Ok(())
    }
}

/// Lines of a journal; a torn final line from a crash is ignored.
fn read_lines(path: &Path) -> Result<Vec<String>, StoreError> {
    let f = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut lines: Vec<String> = BufReader::new(f)
        .lines()
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .filter(|l| !l.trim().is_empty())
        .collect();
    if lines.last().is_some_and(|l| serde_json::from_str::<Value>(l).is_err()) {
        lines.pop();
        let mut body = lines.join("\n");
        if !body.is_empty() {
            body.push('\n');
        }
        fs::write(path, body)?;
    }
    Ok(lines)
}

impl Persistence for FileStore {
    fn put(&self, table: Table, key: &str, value: Value) -> Result<(), StoreError> {
        let line = serde_json::to_string(&Row {
            k: key.to_owned(),
            v: value.clone(),
        })?;
        self.write_line(table.name(), line)?;
        self.mem.put(table, key, value)
    }

    fn get(&self, table: Table, key: &str) -> Result<Option<Value>, StoreError> {
        self.mem.get(table, key)
    }

    fn scan(&self, table: Table) -> Result<Vec<(String, Value)>, StoreError> {
        self.mem.scan(table)
    }

    fn append(&self, log: Log, entry: Value) -> Result<(), StoreError> {
        self.write_line(log.name(), serde_json::to_string(&entry)?)?;
        self.mem.append(log, entry)
    }

    fn read_log(&self, log: Log) -> Result<Vec<Value>, StoreError> {
        self.mem.read_log(log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn exercise(s: &dyn Persistence) {
        s.put(Table::Reports, "b", json!({"n": 1})).unwrap();
        s.put(Table::Reports, "a", json!({"n": 2})).unwrap();
        s.put(Table::Reports, "b", json!({"n": 3})).unwrap();
        s.append(Log::Transitions, json!(1)).unwrap();
        s.append(Log::Transitions, json!(2)).unwrap();
    }

    fn check(s: &dyn Persistence) {
        assert_eq!(s.get(Table::Reports, "b").unwrap(), Some(json!({"n": 3})));
        let keys: Vec<_> = s.scan(Table::Reports).unwrap().into_iter().map(|(k, _)| k).collect();
        assert_eq!(keys, ["a", "b"]);
        assert_eq!(s.read_log(Log::Transitions).unwrap(), vec![json!(1), json!(2)]);
        assert!(s.get(Table::Votes, "a").unwrap().is_none());
    }

    #[test]
    fn memory() {
        let m = MemoryStore::new();
        exercise(&m);
        check(&m);
        let n: Option<serde_json::Map<String, Value>> = m.get_as(Table::Reports, "a").unwrap();
        assert!(n.is_some());
    }

    #[test]
    fn file_store_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let f = FileStore::open(dir.path()).unwrap();
            exercise(&f);
            check(&f);
        }
        // simulate a torn write
        let mut t = OpenOptions::new()
            .append(true)
            .open(dir.path().join("transitions.jsonl"))
            .unwrap();
        t.write_all(b"{\"trunc").unwrap();
        let f = FileStore::open(dir.path()).unwrap();
        check(&f);
        f.append(Log::Transitions, json!(3)).unwrap();
        drop(f);
        let f = FileStore::open(dir.path()).unwrap();
        assert_eq!(f.read_log(Log::Transitions).unwrap().len(), 3);
    }
}
