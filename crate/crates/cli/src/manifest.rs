//! `run_manifest.json`: the exact command, file digests and parallelism of a run.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::Command;

pub const MANIFEST_NAME: &str = "run_manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let data = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Self { path: path.to_path_buf(), sha256: hex::encode(Sha256::digest(&data)), bytes: data.len() as u64 })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub invocation: Command,
    /// Thread and shard counts used; outputs do not depend on them.
    pub threads: usize,
    pub shards: usize,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    pub fn new(
        invocation: &Command,
        threads: usize,
        shards: usize,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
    ) -> Result<Self> {
        Ok(Self {
            tool: "crossboot".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            invocation: invocation.clone(),
            threads,
            shards,
            inputs: inputs.iter().map(|p| FileDigest::of(p)).collect::<Result<_>>()?,
            outputs: outputs.iter().map(|p| FileDigest::of(p)).collect::<Result<_>>()?,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_NAME);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Fails if any recorded input changed since the run.
    pub fn check_inputs(&self) -> Result<()> {
        for input in &self.inputs {
            let now = FileDigest::of(&input.path)?;
            if now.sha256 != input.sha256 {
                bail!("input {} changed since the recorded run", input.path.display());
            }
        }
        Ok(())
    }
}

/// Output files whose digest differs between two manifests, matched by file name.
pub fn differing_outputs(recorded: &Manifest, fresh: &Manifest) -> Vec<String> {
    let name = |p: &Path| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let mut out = Vec::new();
    for r in &recorded.outputs {
        match fresh.outputs.iter().find(|f| name(&f.path) == name(&r.path)) {
            Some(f) if f.sha256 == r.sha256 => {}
            Some(_) => out.push(name(&r.path)),
            None => out.push(format!("{} (missing)", name(&r.path))),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn digest(path: &str, sha: &str) -> FileDigest {
        FileDigest { path: path.into(), sha256: sha.into(), bytes: 0 }
    }

    #[test]
    fn outputs_are_matched_by_file_name() {
        let invocation = Command::Verify(crate::args::VerifyArgs { suite: vec![], out: None });
        let make = |outputs| Manifest {
            tool: "crossboot".into(),
            version: "0".into(),
            invocation: invocation.clone(),
            threads: 1,
            shards: 1,
            inputs: vec![],
            outputs,
        };
        let recorded = make(vec![digest("a/summary.json", "1"), digest("a/replicates.csv", "2"), digest("a/x", "3")]);
        let fresh = make(vec![digest("b/summary.json", "1"), digest("b/replicates.csv", "9")]);
        assert_eq!(differing_outputs(&recorded, &fresh), ["replicates.csv", "x (missing)"]);
    }
}
