//! Run manifests and the output directory they describe.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "run_manifest.json";

/// Sub-seed for a named stage. Stages hash their own label, so adding a
/// stage never shifts another one's stream.
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    let digest = Sha256::digest(format!("uamnoise/{seed}/{label}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    tool_version: &'a str,
    seed: u64,
    sub_seeds: &'a BTreeMap<String, u64>,
    parameters: &'a BTreeMap<String, serde_json::Value>,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

/// Collects a command's outputs and writes the manifest last.
pub struct Run {
    command: &'static str,
    out: PathBuf,
    seed: u64,
    sub_seeds: BTreeMap<String, u64>,
    parameters: BTreeMap<String, serde_json::Value>,
    inputs: Vec<PathBuf>,
    outputs: Vec<String>,
}

impl Run {
    pub fn new(command: &'static str, out: &Path, seed: u64) -> Result<Self> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self {
            command,
            out: out.to_path_buf(),
            seed,
            sub_seeds: BTreeMap::new(),
            parameters: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn seed(&mut self, label: &str) -> u64 {
        let s = sub_seed(self.seed, label);
        self.sub_seeds.insert(label.to_string(), s);
        s
    }

    pub fn param(&mut self, name: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("parameters serialize");
        self.parameters.insert(name.to_string(), v);
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn text(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.out.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
        Ok(())
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.text(name, &s)
    }

    /// Single-line JSON for bulky outputs.
    pub fn json_compact(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut s = serde_json::to_string(value)?;
        s.push('\n');
        self.text(name, &s)
    }

    pub fn finish(self) -> Result<()> {
        let digest = |label: String, path: &Path| -> Result<FileDigest> {
            Ok(FileDigest {
                path: label,
                sha256: sha256_file(path)?,
            })
        };
        let inputs = self
            .inputs
            .iter()
            .map(|p| digest(p.display().to_string(), p))
            .collect::<Result<Vec<_>>>()?;
        let mut names = self.outputs.clone();
        names.sort();
        let outputs = names
            .iter()
            .map(|n| digest(n.clone(), &self.out.join(n)))
            .collect::<Result<Vec<_>>>()?;
        let m = RunManifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            sub_seeds: &self.sub_seeds,
            parameters: &self.parameters,
            inputs,
            outputs,
        };
        let mut s = serde_json::to_string_pretty(&m)?;
        s.push('\n');
        fs::write(self.out.join(MANIFEST), s)?;
        Ok(())
    }
}
