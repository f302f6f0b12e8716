use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::features::{read_feature_header, read_features, read_mask};
use super::{parallel_map, Label, VideoRecord};
use crate::error::{io_err, Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    #[serde(rename = "P")]
    pub crops: usize,
    #[serde(rename = "C")]
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub label: Label,
    /// Feature file, relative to the manifest directory.
    pub path: String,
    pub frame_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
}

/// JSON dataset description. Paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub split: String,
    pub dims: Dims,
    pub videos: Vec<ManifestEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(split: impl Into<String>, dims: Dims, root: impl Into<PathBuf>) -> Self {
        Self {
            version: MANIFEST_VERSION,
            split: split.into(),
            dims,
            videos: Vec::new(),
            root: root.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(io_err(path))
    }

    fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Manifest(format!(
                "unsupported manifest version {}",
                self.version
            )));
        }
        let mut seen = HashSet::new();
        for entry in &self.videos {
            if !seen.insert(entry.id.as_str()) {
                return Err(Error::Manifest(format!(
                    "duplicate video id {:?}",
                    entry.id
                )));
            }
            let path = self.resolve(&entry.path);
            let [n, p, c] = read_feature_header(&path)
                .map_err(|e| Error::Manifest(format!("entry {:?}: {e}", entry.id)))?;
            if n == 0 || p != self.dims.crops || c != self.dims.channels {
                return Err(Error::Manifest(format!(
                    "entry {:?}: features are [N={n}, P={p}, C={c}], manifest dims are P={}, C={}",
                    entry.id, self.dims.crops, self.dims.channels
                )));
            }
            if let Some(mask) = &entry.mask_path {
                if !self.resolve(mask).is_file() {
                    return Err(Error::Manifest(format!(
                        "entry {:?}: mask {mask} not found",
                        entry.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load_record(&self, index: usize) -> Result<VideoRecord> {
        let entry = &self.videos[index];
        let snippets = read_features(&self.resolve(&entry.path))?;
        let mask = entry
            .mask_path
            .as_ref()
            .map(|m| read_mask(&self.resolve(m), entry.frame_count))
            .transpose()?;
        VideoRecord::new(
            entry.id.clone(),
            entry.label,
            snippets,
            entry.frame_count,
            mask,
        )
    }

    /// Loads every record, in manifest order.
    pub fn load_all(&self) -> Result<Vec<VideoRecord>> {
        let indices: Vec<usize> = (0..self.len()).collect();
        parallel_map(&indices, |&i| self.load_record(i))
            .into_iter()
            .collect()
    }
}

/// Reads and validates a manifest: version, unique ids, and that every
/// feature file exists with the declared dims.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    manifest.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    manifest.validate()?;
    Ok(manifest)
}
