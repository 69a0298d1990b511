//! Content-addressed blob storage (`blobs/<2-hex-prefix>/<sha256>`).

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use parking_lot::RwLock;
use sha2::{Digest, Sha256};

use crate::domain::BlobId;

pub fn blob_id(bytes: &[u8]) -> BlobId {
    BlobId(hex::encode(Sha256::digest(bytes)))
}

pub trait BlobStore: Send + Sync {
    fn put(&self, bytes: &[u8]) -> io::Result<BlobId>;
    fn get(&self, id: &BlobId) -> io::Result<Option<Vec<u8>>>;
    fn list(&self) -> io::Result<Vec<BlobId>>;

    fn contains(&self, id: &BlobId) -> io::Result<bool> {
        Ok(self.get(id)?.is_some())
    }
}

#[derive(Debug, Default)]
pub struct MemoryBlobStore {
    blobs: RwLock<BTreeMap<BlobId, Vec<u8>>>,
}

impl MemoryBlobStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl BlobStore for MemoryBlobStore {
    fn put(&self, bytes: &[u8]) -> io::Result<BlobId> {
        let id = blob_id(bytes);
        self.blobs
            .write()
            .entry(id.clone())
            .or_insert_with(|| bytes.to_vec());
        Ok(id)
    }

    fn get(&self, id: &BlobId) -> io::Result<Option<Vec<u8>>> {
        Ok(self.blobs.read().get(id).cloned())
    }

    fn list(&self) -> io::Result<Vec<BlobId>> {
        Ok(self.blobs.read().keys().cloned().collect())
    }

    fn contains(&self, id: &BlobId) -> io::Result<bool> {
        Ok(self.blobs.read().contains_key(id))
    }
}

#[derive(Debug, Clone)]
pub struct FsBlobStore {
    root: PathBuf,
}

impl FsBlobStore {
    /// Blobs live under `<dir>/blobs/`.
    pub fn open(dir: impl AsRef<Path>) -> io::Result<Self> {
        let root = dir.as_ref().join("blobs");
        fs::create_dir_all(&root)?;
        Ok(FsBlobStore { root })
    }

    fn path_of(&self, id: &BlobId) -> Option<PathBuf> {
        let s = id.as_str();
        if s.len() != 64 || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
            return None;
        }
        Some(self.root.join(&s[..2]).join(s))
    }
}

impl BlobStore for FsBlobStore {
    fn put(&self, bytes: &[u8]) -> io::Result<BlobId> {
        let id = blob_id(bytes);
        let path = self.path_of(&id).expect("sha256 ids are well formed");
        if path.exists() {
            return Ok(id);
        }
        let dir = path.parent().expect("blob path has a prefix dir");
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(".{}.tmp{}", id, std::process::id()));
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, &path)?;
        Ok(id)
    }

    fn get(&self, id: &BlobId) -> io::Result<Option<Vec<u8>>> {
        let Some(path) = self.path_of(id) else {
            return Ok(None);
        };
        match fs::read(path) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn list(&self) -> io::Result<Vec<BlobId>> {
        let mut ids = Vec::new();
        for prefix in fs::read_dir(&self.root)? {
            let prefix = prefix?;
            if !prefix.file_type()?.is_dir() {
                continue;
            }
            for entry in fs::read_dir(prefix.path())? {
                let name = entry?.file_name().to_string_lossy().into_owned();
                if !name.starts_with('.') {
                    ids.push(BlobId(name));
                }
            }
        }
        ids.sort();
        Ok(ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fs_layout_is_content_addressed() {
        let dir = tempfile::tempdir().unwrap();
        let store = FsBlobStore::open(dir.path()).unwrap();
        let id = store.put(b"hello").unwrap();
        assert_eq!(
            id.as_str(),
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
        assert!(dir.path().join("blobs/2c").join(id.as_str()).exists());
        assert_eq!(store.put(b"hello").unwrap(), id);
        assert_eq!(store.get(&id).unwrap().unwrap(), b"hello");
        assert_eq!(store.list().unwrap(), vec![id]);
        assert_eq!(store.get(&BlobId::new("../etc/passwd")).unwrap(), None);
    }

    #[test]
    fn memory_store_dedups() {
        let store = MemoryBlobStore::new();
        let a = store.put(b"x").unwrap();
        let b = store.put(b"x").unwrap();
        assert_eq!(a, b);
        assert_eq!(store.list().unwrap().len(), 1);
    }
}
