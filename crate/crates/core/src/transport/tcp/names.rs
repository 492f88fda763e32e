//! Topic → `host:port` name registry kept in a JSON file.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant, SystemTime};

use crate::topic::Topic;
use crate::transport::{Result, TransportError};

const LOCK_WAIT: Duration = Duration::from_secs(3);
const LOCK_STALE: Duration = Duration::from_secs(10);

/// Maps replier topics to socket addresses so requesters can find them.
///
/// Writers serialize through a sibling `.lock` file and replace the registry
/// atomically, so concurrent processes never observe a torn file.
#[derive(Debug, Clone)]
pub struct NameRegistry {
    path: PathBuf,
}

impl NameRegistry {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        NameRegistry { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn entries(&self) -> Result<BTreeMap<String, String>> {
        match fs::read(&self.path) {
            Ok(bytes) if bytes.iter().all(u8::is_ascii_whitespace) => Ok(BTreeMap::new()),
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| {
                TransportError::NameRegistry(format!("{}: {e}", self.path.display()))
            }),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(BTreeMap::new()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn lookup(&self, topic: &Topic) -> Result<Option<String>> {
        Ok(self.entries()?.remove(topic.as_str()))
    }

    pub fn register(&self, topic: &Topic, addr: &str) -> Result<()> {
        self.update(|entries| {
            entries.insert(topic.to_string(), addr.to_string());
        })
    }

    /// Removes the entry only if it still points at `addr`.
    pub fn unregister(&self, topic: &Topic, addr: &str) -> Result<()> {
        self.update(|entries| {
            if entries.get(topic.as_str()).map(String::as_str) == Some(addr) {
                entries.remove(topic.as_str());
            }
        })
    }

    fn update(&self, f: impl FnOnce(&mut BTreeMap<String, String>)) -> Result<()> {
        let _lock = FileLock::acquire(&self.lock_path())?;
        let mut entries = self.entries()?;
        f(&mut entries);
        let tmp = self
            .path
            .with_extension(format!("tmp.{}", std::process::id()));
        {
            let mut file = fs::File::create(&tmp)?;
            serde_json::to_writer_pretty(&mut file, &entries)
                .map_err(|e| TransportError::NameRegistry(e.to_string()))?;
            file.write_all(b"\n")?;
        }
        fs::rename(&tmp, &self.path)?;
        Ok(())
    }

    fn lock_path(&self) -> PathBuf {
        let mut name = self.path.file_name().unwrap_or_default().to_os_string();
        name.push(".lock");
        self.path.with_file_name(name)
    }
}

struct FileLock {
    path: PathBuf,
}

impl FileLock {
    fn acquire(path: &Path) -> Result<Self> {
        let start = Instant::now();
        loop {
            match OpenOptions::new().write(true).create_new(true).open(path) {
                Ok(_) => return Ok(FileLock { path: path.to_path_buf() }),
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                    let stale = fs::metadata(path)
                        .and_then(|m| m.modified())
                        .ok()
                        .and_then(|t| SystemTime::now().duration_since(t).ok())
                        .is_some_and(|age| age > LOCK_STALE);
                    if stale {
                        let _ = fs::remove_file(path);
                        continue;
                    }
                    if start.elapsed() > LOCK_WAIT {
                        return Err(TransportError::NameRegistry(format!(
                            "timed out waiting for {}",
                            path.display()
                        )));
                    }
                    std::thread::sleep(Duration::from_millis(2));
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
}

impl Drop for FileLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
