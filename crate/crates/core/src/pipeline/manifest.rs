//! Line-delimited dataset manifests.
//!
//! ```text
//! # dataset: toy
//! {"image_path": "img/0000.png", "identity_id": "id-000", "split": "train"}
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub image_path: String,
    pub identity_id: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub dataset_name: String,
    pub records: Vec<ManifestRecord>,
    /// Directory relative image paths are resolved against.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(dataset_name: impl Into<String>, records: Vec<ManifestRecord>) -> Result<Self> {
        let m = Self {
            dataset_name: dataset_name.into(),
            records,
            base_dir: PathBuf::new(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::Empty("empty manifest".into()));
        }
        let mut seen = HashSet::new();
        for r in &self.records {
            if r.identity_id.trim().is_empty() {
                return Err(Error::Config(format!("empty identity id for '{}'", r.image_path)));
            }
            if !seen.insert(r.image_path.as_str()) {
                return Err(Error::DuplicatePath(r.image_path.clone()));
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn resolve(&self, record: &ManifestRecord) -> PathBuf {
        let p = Path::new(&record.image_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn to_text(&self) -> Result<String> {
        let mut out = format!("# dataset: {}\n", self.dataset_name);
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?).map_err(|e| Error::io(path, e))
    }
}

/// Parses manifest text. `path` is only used for diagnostics.
pub fn parse_manifest(text: &str, path: &Path) -> Result<DatasetManifest> {
    let mut name = None;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(n) = comment.trim().strip_prefix("dataset:") {
                name = Some(n.trim().to_string());
            }
            continue;
        }
        let err = |reason: String| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if rec.identity_id.trim().is_empty() {
            return Err(err("empty identity_id".into()));
        }
        if !seen.insert(rec.image_path.clone()) {
            return Err(Error::DuplicatePath(rec.image_path));
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::Empty("empty manifest".into()));
    }
    let dataset_name = name.unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    Ok(DatasetManifest {
        dataset_name,
        records,
        base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
    })
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path)
}
