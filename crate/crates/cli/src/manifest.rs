//! Run manifests: what a command wrote, with content hashes.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_SCHEMA: u32 = 1;

/// SHA-256 of `"blob <len>\0" ++ bytes`, the object id git uses in its
/// SHA-256 object format.
pub fn git_style_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
    /// Schema tag for CSV outputs, e.g. `episodes/1`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub seed: Option<u64>,
    /// Effective configuration, as TOML.
    pub config: String,
    pub status: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub artifacts: Vec<Artifact>,
}

pub fn unix_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

/// Collects artifacts as they are written under one output directory.
#[derive(Debug)]
pub struct ArtifactWriter {
    root: PathBuf,
    artifacts: Vec<Artifact>,
}

impl ArtifactWriter {
    pub fn new(root: &Path) -> std::io::Result<ArtifactWriter> {
        fs::create_dir_all(root)?;
        Ok(ArtifactWriter {
            root: root.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, rel: &str, contents: &[u8], schema: Option<&str>) -> std::io::Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, contents)?;
        self.artifacts.retain(|a| a.path != rel);
        self.artifacts.push(Artifact {
            path: rel.to_string(),
            sha256: git_style_hash(contents),
            bytes: contents.len() as u64,
            schema: schema.map(str::to_string),
        });
        Ok(path)
    }

    pub fn finish(self, name: &str, mut manifest: RunManifest) -> std::io::Result<PathBuf> {
        manifest.artifacts = self.artifacts;
        manifest.finished_unix_ms = unix_ms();
        let path = self.root.join(name);
        let text = serde_json::to_string_pretty(&manifest).map_err(std::io::Error::other)?;
        fs::write(&path, text + "\n")?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_matches_git_sha256_objects() {
        // `printf 'hello\n' | git hash-object --object-format=sha256 --stdin`
        assert_eq!(
            git_style_hash(b"hello\n"),
            "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4"
        );
    }

    #[test]
    fn rewriting_replaces_entry() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = ArtifactWriter::new(dir.path()).unwrap();
        w.write("a.csv", b"x\n", Some("t/1")).unwrap();
        w.write("a.csv", b"y\n", Some("t/1")).unwrap();
        let m = RunManifest {
            schema_version: MANIFEST_SCHEMA,
            command: "test".into(),
            seed: None,
            config: String::new(),
            status: "ok".into(),
            started_unix_ms: 0,
            finished_unix_ms: 0,
            artifacts: vec![],
        };
        let path = w.finish("manifest.json", m).unwrap();
        let back: RunManifest = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(back.artifacts.len(), 1);
        assert_eq!(back.artifacts[0].sha256, git_style_hash(b"y\n"));
    }
}
