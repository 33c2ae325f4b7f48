use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::model::{LineWriter, RunManifest};

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

pub fn load_manifest(path: &Path) -> Option<RunManifest> {
    let text = std::fs::read_to_string(path).ok()?;
    match serde_json::from_str(&text) {
        Ok(m) => Some(m),
        Err(e) => {
            log::warn!("ignoring unreadable manifest {}: {}", path.display(), e);
            None
        }
    }
}

pub fn save_manifest(path: &Path, m: &RunManifest) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(m).map_err(std::io::Error::other)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// One line of the run log. Timings are left out so that logs of identical
/// runs are identical.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub stage: String,
    pub item: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub round: Option<usize>,
    pub outcome: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub detail: Option<String>,
}

impl Event {
    pub fn new(stage: &str, item: impl Into<String>, outcome: impl Into<String>) -> Self {
        Event { stage: stage.into(), item: item.into(), round: None, outcome: outcome.into(), detail: None }
    }

    pub fn round(mut self, r: usize) -> Self {
        self.round = Some(r);
        self
    }

    pub fn detail(mut self, d: impl Into<String>) -> Self {
        self.detail = Some(d.into());
        self
    }
}

/// Drops a torn final line left by a crash mid-write.
pub fn repair_tail(path: &Path) -> std::io::Result<()> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(e),
    };
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    log::warn!("{}: dropping an incomplete final line", path.display());
    OpenOptions::new().write(true).open(path)?.set_len(keep as u64)
}

/// Reads a checkpoint file, tolerating a torn final line. A missing file is
/// an empty checkpoint.
pub fn read_checkpoint<T: DeserializeOwned>(path: &Path) -> std::io::Result<Vec<T>> {
    repair_tail(path)?;
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v = serde_json::from_str(line)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{} line {}: {}", path.display(), i + 1, e)))?;
        out.push(v);
    }
    Ok(out)
}

/// Appends whole lines and flushes, so a later crash cannot tear them.
pub fn append_lines<T: Serialize>(path: &Path, items: &[T]) -> std::io::Result<()> {
    if items.is_empty() {
        return Ok(());
    }
    let mut w = LineWriter::append(path)?;
    for it in items {
        w.write_json(it)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn torn_line_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        std::fs::write(&p, "{\"a\":1}\n{\"a\":2}\n{\"a\":").unwrap();
        let v: Vec<serde_json::Value> = read_checkpoint(&p).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "{\"a\":1}\n{\"a\":2}\n");
        append_lines(&p, &[serde_json::json!({"a": 3})]).unwrap();
        assert_eq!(read_checkpoint::<serde_json::Value>(&p).unwrap().len(), 3);
    }

    #[test]
    fn missing_checkpoint_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        assert!(read_checkpoint::<serde_json::Value>(&dir.path().join("none")).unwrap().is_empty());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert!(!dir.path().join("m.json.tmp").exists());
    }

    #[test]
    fn event_line_shape() {
        let e = Event::new("translate", "q1:postgres", "valid").round(2);
        assert_eq!(serde_json::to_string(&e).unwrap(), r#"{"stage":"translate","item":"q1:postgres","round":2,"outcome":"valid"}"#);
    }
}
