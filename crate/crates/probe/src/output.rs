//! Output directory bookkeeping: every file goes through here so the produced
//! files can be listed with their SHA-256 at the end of a command.

use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use wotf_core::datasets::Image8;
use wotf_core::Grid;

use crate::error::{ProbeError, Result};
use crate::formats::{encode_grid, encode_pgm, grid_preview, write_atomic};

pub const PRODUCED_MANIFEST: &str = "produced_files.json";

#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    produced: BTreeMap<String, String>,
}

#[derive(Debug, Serialize)]
struct ProducedEntry<'a> {
    path: &'a str,
    sha256: &'a str,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl OutputDir {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| ProbeError::io(&root, e))?;
        Ok(OutputDir {
            root,
            produced: BTreeMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Writes `bytes` to `rel` (relative, no `..`) under the root.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let relp = Path::new(rel);
        if relp
            .components()
            .any(|c| !matches!(c, Component::Normal(_)))
        {
            return Err(ProbeError::format(
                relp,
                "output paths must stay inside the output directory",
            ));
        }
        let path = self.root.join(relp);
        write_atomic(&path, bytes)?;
        self.produced
            .insert(rel.replace('\\', "/"), sha256_hex(bytes));
        Ok(path)
    }

    pub fn write_text(&mut self, rel: &str, text: &str) -> Result<PathBuf> {
        self.write(rel, text.as_bytes())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, rel: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable value");
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    pub fn write_pgm(&mut self, rel: &str, img: &Image8) -> Result<PathBuf> {
        self.write(rel, &encode_pgm(img))
    }

    /// Writes `<stem>.wpgd` and a min-max scaled `<stem>.preview.pgm`.
    pub fn write_grid(&mut self, stem: &str, g: &Grid) -> Result<PathBuf> {
        let path = self.write(&format!("{stem}.wpgd"), &encode_grid(g))?;
        self.write_pgm(&format!("{stem}.preview.pgm"), &grid_preview(g))?;
        Ok(path)
    }

    pub fn produced(&self) -> impl Iterator<Item = (&str, &str)> {
        self.produced.iter().map(|(p, h)| (p.as_str(), h.as_str()))
    }

    /// Writes the manifest of everything produced so far (sorted by path).
    pub fn finish(self) -> Result<PathBuf> {
        let entries: Vec<ProducedEntry> = self
            .produced
            .iter()
            .map(|(p, h)| ProducedEntry { path: p, sha256: h })
            .collect();
        let mut text = serde_json::to_string_pretty(&entries).expect("serializable");
        text.push('\n');
        let path = self.root.join(PRODUCED_MANIFEST);
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_hashes_and_rejects_escapes() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::new(dir.path()).unwrap();
        out.write_text("a/b.txt", "hello").unwrap();
        assert!(out.write_text("../x", "no").is_err());
        assert!(out.write_text("/abs", "no").is_err());
        let hashes: Vec<_> = out
            .produced()
            .map(|(p, h)| (p.to_string(), h.to_string()))
            .collect();
        assert_eq!(
            hashes,
            vec![(
                "a/b.txt".to_string(),
                "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824".to_string()
            )]
        );
        let manifest = out.finish().unwrap();
        let text = std::fs::read_to_string(manifest).unwrap();
        assert!(text.contains("a/b.txt") && text.contains("2cf24dba"));
    }
}
