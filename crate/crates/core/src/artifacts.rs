//! Run directories: every file written for a run is listed in `index.json`
//! together with the resolved configuration it came from.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::jsonl;

pub const INDEX_FILE: &str = "index.json";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ArtifactKind {
    Csv,
    Json,
    Jsonl,
    Toml,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ArtifactEntry {
    pub file: String,
    pub kind: ArtifactKind,
    /// Data rows, header excluded.
    pub rows: Option<usize>,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunIndex {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub artifacts: Vec<ArtifactEntry>,
}

/// Collects the artifacts of one command invocation.
#[derive(Debug)]
pub struct RunWriter {
    dir: PathBuf,
    index: RunIndex,
}

impl RunWriter {
    /// Creates `dir` and writes the resolved configuration into it.
    pub fn create(dir: impl Into<PathBuf>, command: &str, config: &ExperimentConfig) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut run = RunWriter {
            dir,
            index: RunIndex {
                command: command.to_string(),
                config_hash: config.hash(),
                seed: config.seed,
                artifacts: Vec::new(),
            },
        };
        let resolved = ExperimentConfig {
            out: None,
            ..config.clone()
        };
        let text = resolved.to_toml()?;
        run.write_with(CONFIG_FILE, ArtifactKind::Toml, None, |w| {
            w.write_all(text.as_bytes()).map_err(|e| Error::io(CONFIG_FILE, e))
        })?;
        Ok(run)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn index(&self) -> &RunIndex {
        &self.index
    }

    pub fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        self.write_with(name, ArtifactKind::Csv, Some(rows.len()), |w| {
            let mut out = csv::Writer::from_writer(w);
            for r in rows {
                out.serialize(r)?;
            }
            out.flush().map_err(|e| Error::io(name, e))
        })
    }

    /// Pretty JSON with the config hash and seed merged into top-level objects.
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut v = serde_json::to_value(value)?;
        if let serde_json::Value::Object(map) = &mut v {
            map.insert("config_hash".into(), self.index.config_hash.clone().into());
            map.insert("seed".into(), self.index.seed.into());
        }
        self.write_with(name, ArtifactKind::Json, None, |w| {
            serde_json::to_writer_pretty(&mut *w, &v)?;
            w.write_all(b"\n").map_err(|e| Error::io(name, e))
        })
    }

    pub fn jsonl<T: Serialize>(&mut self, name: &str, items: &[T]) -> Result<()> {
        self.write_with(name, ArtifactKind::Jsonl, Some(items.len()), |w| {
            jsonl::write_jsonl(w, items)
        })
    }

    /// Writes a file through `f` and records it in the index.
    pub fn write_with(
        &mut self,
        name: &str,
        kind: ArtifactKind,
        rows: Option<usize>,
        f: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
    ) -> Result<()> {
        if name == INDEX_FILE || self.index.artifacts.iter().any(|a| a.file == name) {
            return Err(Error::invalid(
                "artifact",
                format!("{name} is already part of this run"),
            ));
        }
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w)?;
        w.flush().map_err(|e| Error::io(&path, e))?;
        drop(w);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        self.index.artifacts.push(ArtifactEntry {
            file: name.to_string(),
            kind,
            rows,
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }

    /// Writes `index.json` and returns its path.
    pub fn finish(self) -> Result<PathBuf> {
        let path = self.dir.join(INDEX_FILE);
        let mut text = serde_json::to_string_pretty(&self.index)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// File-name friendly form of a cell id.
pub fn slug(cell: &str) -> String {
    let mut out = String::with_capacity(cell.len());
    for c in cell.chars() {
        match c {
            'a'..='z' | 'A'..='Z' | '0'..='9' | '.' | '-' => out.push(c),
            '=' => out.push('-'),
            _ if !out.ends_with('_') => out.push('_'),
            _ => {}
        }
    }
    out.trim_matches('_').to_string()
}
