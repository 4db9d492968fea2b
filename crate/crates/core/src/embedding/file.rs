//! Precomputed features from a JSONL manifest.
//!
//! Each manifest line is `{"id": .., "dim": .., "values": [..]}` or
//! `{"id": .., "dim": .., "path": "x.bin", "offset": 0}` where the sidecar
//! holds `dim` little-endian f32 values starting at byte `offset`. Relative
//! paths resolve against the manifest's directory.
//!
//! Frames are looked up by their `clip_ref` (falling back to the frame id) and
//! `rnr_ref`. Text prompts are looked up as `text:<trimmed prompt>`.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::{check_query, Embedding, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::frame::FrameRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub id: String,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f32>>,
}

#[derive(Debug, Clone)]
pub struct FileProvider {
    d_clip: usize,
    d_rnr: usize,
    entries: HashMap<String, Embedding>,
}

impl FileProvider {
    pub fn open(manifest: &Path, d_clip: usize, d_rnr: usize) -> Result<Self> {
        let base = manifest.parent().unwrap_or(Path::new("."));
        let reader = BufReader::new(fs::File::open(manifest)?);
        let mut entries = HashMap::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: FeatureEntry = serde_json::from_str(&line).map_err(|e| {
                Error::input(format!("feature manifest line {}: {e}", lineno + 1))
            })?;
            let values = read_values(&entry, base)?;
            entries.insert(entry.id.clone(), Embedding::from_f32(&values)?);
        }
        Ok(FileProvider {
            d_clip,
            d_rnr,
            entries,
        })
    }

    pub fn from_entries(
        entries: impl IntoIterator<Item = (String, Embedding)>,
        d_clip: usize,
        d_rnr: usize,
    ) -> Self {
        FileProvider {
            d_clip,
            d_rnr,
            entries: entries.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn lookup(&self, key: &str, dim: usize) -> Result<Embedding> {
        let e = self
            .entries
            .get(key)
            .ok_or_else(|| Error::Lookup(key.to_owned()))?;
        if e.dim() != dim {
            return Err(Error::input(format!(
                "feature '{key}' has dim {}, expected {dim}",
                e.dim()
            )));
        }
        Ok(e.clone())
    }
}

fn read_values(entry: &FeatureEntry, base: &Path) -> Result<Vec<f32>> {
    let values = match (&entry.values, &entry.path) {
        (Some(v), _) => v.clone(),
        (None, Some(p)) => {
            let path = if p.is_absolute() {
                p.clone()
            } else {
                base.join(p)
            };
            let bytes = fs::read(&path)?;
            let start = entry.offset.unwrap_or(0) as usize;
            let end = start + entry.dim * 4;
            if end > bytes.len() {
                return Err(Error::input(format!(
                    "feature '{}' needs bytes {start}..{end} of {}, file has {}",
                    entry.id,
                    path.display(),
                    bytes.len()
                )));
            }
            bytes[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect()
        }
        (None, None) => {
            return Err(Error::input(format!(
                "feature '{}' has neither values nor path",
                entry.id
            )))
        }
    };
    if values.len() != entry.dim {
        return Err(Error::input(format!(
            "feature '{}' declares dim {} but has {} values",
            entry.id,
            entry.dim,
            values.len()
        )));
    }
    Ok(values)
}

impl EmbeddingProvider for FileProvider {
    fn clip_dim(&self) -> usize {
        self.d_clip
    }

    fn rnr_dim(&self) -> usize {
        self.d_rnr
    }

    fn embed_text(&self, query: &str) -> Result<Embedding> {
        let q = check_query(query)?;
        self.lookup(&format!("text:{q}"), self.d_clip)
    }

    fn embed_frame(&self, frame: &FrameRecord) -> Result<Embedding> {
        self.lookup(frame.clip_ref.as_deref().unwrap_or(&frame.id), self.d_clip)
    }

    fn embed_frame_rnr(&self, frame: &FrameRecord) -> Result<Option<Embedding>> {
        frame
            .rnr_ref
            .as_deref()
            .map(|r| self.lookup(r, self.d_rnr))
            .transpose()
    }
}
