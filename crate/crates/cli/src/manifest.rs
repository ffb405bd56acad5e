//! `manifest.json`: what a run was asked to do and what it read.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::failure::Failure;

#[derive(Debug, Serialize)]
pub struct Versions {
    pub vdea: &'static str,
    pub checkpoint_format: u32,
    pub dataset_format: u32,
}

impl Default for Versions {
    fn default() -> Self {
        Versions {
            vdea: env!("CARGO_PKG_VERSION"),
            checkpoint_format: vdea::trainer::CHECKPOINT_VERSION,
            dataset_format: vdea::data::io::FORMAT_VERSION,
        }
    }
}

/// No timestamps or durations, so identical runs write identical manifests.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: &'static str,
    pub versions: Versions,
    pub seeds: BTreeMap<&'static str, u64>,
    /// Resolved configuration after flags, file and defaults.
    pub config: Value,
    /// Config keys whose value came from a command line flag.
    pub overrides: Vec<&'static str>,
    /// sha256 of every input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &'static str, config: impl Serialize) -> Result<Self, Failure> {
        Ok(Manifest {
            command,
            versions: Versions::default(),
            seeds: BTreeMap::new(),
            config: serde_json::to_value(config)?,
            overrides: Vec::new(),
            inputs: BTreeMap::new(),
        })
    }

    pub fn seed(mut self, name: &'static str, value: u64) -> Self {
        self.seeds.insert(name, value);
        self
    }

    pub fn overrides(mut self, keys: Vec<&'static str>) -> Self {
        self.overrides = keys;
        self
    }

    /// Records `path`: a file's digest, or one digest per file below a directory.
    pub fn input(mut self, path: &Path) -> Result<Self, Failure> {
        for file in files_under(path)? {
            let digest = hex::encode(Sha256::digest(fs::read(&file)?));
            self.inputs.insert(file.display().to_string(), digest);
        }
        Ok(self)
    }

    pub fn write(&self, path: &Path) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

fn files_under(path: &Path) -> Result<Vec<PathBuf>, Failure> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(path)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    entries.sort();
    for e in entries {
        out.extend(files_under(&e)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directory_inputs_list_each_file_in_order() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("sub")).unwrap();
        fs::write(dir.path().join("b.txt"), "b").unwrap();
        fs::write(dir.path().join("sub/a.txt"), "abc").unwrap();
        let m = Manifest::new("test", ())
            .unwrap()
            .input(dir.path())
            .unwrap();
        let keys: Vec<&String> = m.inputs.keys().collect();
        assert_eq!(keys.len(), 2);
        assert!(keys[0].ends_with("b.txt") && keys[1].ends_with("a.txt"));
        // sha256("abc")
        assert_eq!(
            m.inputs[keys[1]],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
