use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use cohkern::{Error, Result};

/// Record written next to every output: what ran, with which flags and
/// seeds, on which inputs, producing which files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    /// Command line after the program name; `cohkern replay` re-runs it.
    pub args: Vec<String>,
    pub flags: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    #[serde(default)]
    pub results: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
    /// Set when the digest skips nondeterministic content.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excludes: Option<String>,
}

static ARGS: OnceLock<Vec<String>> = OnceLock::new();

/// Command line recorded in every manifest written by this process;
/// defaults to the real arguments.
pub fn set_args(args: Vec<String>) {
    let _ = ARGS.set(args);
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn digest_file(path: &Path) -> Result<FileDigest> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: sha256_hex(&bytes),
        excludes: None,
    })
}

/// Digest of a CSV with its last column (wall-clock seconds) removed.
pub fn digest_without_timing(path: &Path) -> Result<FileDigest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let stripped: String = text
        .lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .flat_map(|l| [l, "\n"])
        .collect();
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: sha256_hex(stripped.as_bytes()),
        excludes: Some("seconds column".into()),
    })
}

impl RunManifest {
    pub fn new(command: &str, flags: serde_json::Value) -> Self {
        RunManifest {
            command: command.to_owned(),
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            args: ARGS.get_or_init(|| std::env::args().skip(1).collect()).clone(),
            flags,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            results: serde_json::Value::Null,
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) -> &mut Self {
        self.seeds.insert(name.to_owned(), value);
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        self.inputs.push(digest_file(path)?);
        Ok(self)
    }

    pub fn output(&mut self, path: &Path) -> Result<&mut Self> {
        self.outputs.push(digest_file(path)?);
        Ok(self)
    }

    pub fn timed_output(&mut self, path: &Path) -> Result<&mut Self> {
        self.outputs.push(digest_without_timing(path)?);
        Ok(self)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Validation(format!("cannot encode manifest: {e}")))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.line(), e.to_string()))
    }
}

/// `<path>.manifest.json`.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn timing_column_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        std::fs::write(&a, "epoch,objective,seconds\n1,0.5,0.013\n").unwrap();
        std::fs::write(&b, "epoch,objective,seconds\n1,0.5,0.250\n").unwrap();
        assert_eq!(digest_without_timing(&a).unwrap().sha256, digest_without_timing(&b).unwrap().sha256);
        assert_ne!(digest_file(&a).unwrap().sha256, digest_file(&b).unwrap().sha256);
    }

    #[test]
    fn manifest_path_appends() {
        assert_eq!(manifest_path(Path::new("out/model.ckpt")), PathBuf::from("out/model.ckpt.manifest.json"));
    }
}
