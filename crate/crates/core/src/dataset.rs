//! Grounding dataset records, one JSON object per line:
//!
//! ```json
//! {"image_path": "shots/a.png", "instruction": "open settings",
//!  "bbox": [0.41, 0.12, 0.47, 0.16], "platform": "web", "element_type": "icon"}
//! ```
//!
//! `bbox` is normalized `[xmin, ymin, xmax, ymax]`. Optional fields: `id`,
//! and `width`/`height`, which let the simulated backend run without the
//! image file.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, GeometryError, ImageDims};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Schema { path: String, line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Platform {
    Mobile,
    Desktop,
    Web,
    #[default]
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ElementType {
    Text,
    Icon,
    #[default]
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub image_path: PathBuf,
    pub instruction: String,
    pub bbox: [f64; 4],
    #[serde(default)]
    pub platform: Platform,
    #[serde(default)]
    pub element_type: ElementType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
}

impl DatasetRecord {
    pub fn gt(&self) -> Result<BBox, GeometryError> {
        let [x0, y0, x1, y1] = self.bbox;
        BBox::new(x0, y0, x1, y1)
    }

    pub fn declared_dims(&self) -> Option<ImageDims> {
        match (self.width, self.height) {
            (Some(w), Some(h)) => ImageDims::new(w, h).ok(),
            _ => None,
        }
    }

    pub fn id_or_index(&self, index: usize) -> String {
        self.id.clone().unwrap_or_else(|| format!("{index:06}"))
    }

    /// Image path resolved against the dataset file's directory.
    pub fn resolved_image_path(&self, base: Option<&Path>) -> PathBuf {
        match base {
            Some(dir) if self.image_path.is_relative() => dir.join(&self.image_path),
            _ => self.image_path.clone(),
        }
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| DatasetError::Schema {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Records plus the directory relative image paths are resolved against.
pub fn read_dataset(path: &Path) -> Result<(Vec<DatasetRecord>, Option<PathBuf>), DatasetError> {
    let records: Vec<DatasetRecord> = read_jsonl(path)?;
    for (i, r) in records.iter().enumerate() {
        r.gt().map_err(|e| DatasetError::Schema {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
    }
    Ok((records, path.parent().map(Path::to_path_buf)))
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, items: impl IntoIterator<Item = &'a T>) -> Result<(), DatasetError> {
    let io = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(
            &path,
            "{\"image_path\":\"a.png\",\"instruction\":\"go\",\"bbox\":[0.1,0.2,0.3,0.4],\"platform\":\"web\",\"element_type\":\"icon\"}\n\n",
        )
        .unwrap();
        let (recs, base) = read_dataset(&path).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].platform, Platform::Web);
        assert_eq!(recs[0].resolved_image_path(base.as_deref()), dir.path().join("a.png"));
        let out = dir.path().join("o.jsonl");
        write_jsonl(&out, &recs).unwrap();
        let again: Vec<DatasetRecord> = read_jsonl(&out).unwrap();
        assert_eq!(again, recs);
    }

    #[test]
    fn schema_errors_carry_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(&path, "{\"image_path\":\"a.png\",\"instruction\":\"go\",\"bbox\":[0.5,0.2,0.3,0.4]}\n").unwrap();
        let err = read_dataset(&path).unwrap_err();
        assert!(matches!(err, DatasetError::Schema { line: 1, .. }), "{err}");
        std::fs::write(&path, "{}\n").unwrap();
        assert!(read_dataset(&path).is_err());
    }
}
