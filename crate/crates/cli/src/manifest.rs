//! `manifest.json`: the provenance index of an output directory.
//!
//! Every command records the artifacts it wrote — each with the producing
//! command, the config digest of that run, and the artifact's SHA-256 — so
//! any file in the directory can be traced back to its settings and checked
//! for corruption. The manifest carries no timestamps; rerunning a command
//! on the same inputs leaves it byte-identical.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "manifest.json";

/// One artifact's provenance record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Subcommand that wrote the file.
    pub command: String,
    /// Digest of the configuration that produced it.
    pub config_digest: String,
    /// SHA-256 (hex) of the file's bytes.
    pub sha256: String,
}

/// The manifest: artifact file name → provenance.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifacts: BTreeMap<String, ArtifactEntry>,
}

impl Manifest {
    /// Loads the manifest from `dir`, or an empty one if none exists yet.
    pub fn load(dir: &Path) -> Result<Manifest> {
        let path = dir.join(MANIFEST_NAME);
        if !path.exists() {
            return Ok(Manifest::default());
        }
        let raw = std::fs::read_to_string(&path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        serde_json::from_str(&raw)
            .with_context(|| format!("{} is not a valid manifest", path.display()))
    }

    /// Writes the manifest into `dir` (pretty JSON, trailing newline).
    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_NAME);
        let mut body = serde_json::to_string_pretty(self).expect("manifest serializes");
        body.push('\n');
        std::fs::write(&path, body).with_context(|| format!("cannot write {}", path.display()))
    }
}

/// Records `files` (paths inside `dir`) as artifacts of `command`, merging
/// with any existing manifest, and returns the recorded names in order.
pub fn record_artifacts(
    dir: &Path,
    command: &str,
    config_digest: &str,
    files: &[&Path],
) -> Result<Vec<String>> {
    let mut manifest = Manifest::load(dir)?;
    let mut names = Vec::new();
    for file in files {
        let name = match file.strip_prefix(dir) {
            Ok(rel) => rel.to_string_lossy().into_owned(),
            Err(_) => bail!(
                "artifact {} is outside the output directory {}",
                file.display(),
                dir.display()
            ),
        };
        let bytes = std::fs::read(file)
            .with_context(|| format!("cannot hash artifact {}", file.display()))?;
        manifest.artifacts.insert(
            name.clone(),
            ArtifactEntry {
                command: command.to_string(),
                config_digest: config_digest.to_string(),
                sha256: hex::encode(Sha256::digest(&bytes)),
            },
        );
        names.push(name);
    }
    manifest.save(dir)?;
    Ok(names)
}
