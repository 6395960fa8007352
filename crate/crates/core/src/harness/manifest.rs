//! Dataset manifests: a JSON array of entries whose paths are resolved
//! relative to the manifest file.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub image_path: PathBuf,
    pub shadow_mask_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labelmap_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result_path: Option<PathBuf>,
}

impl ManifestEntry {
    fn paths(&self) -> impl Iterator<Item = &PathBuf> {
        [&self.image_path, &self.shadow_mask_path]
            .into_iter()
            .chain(self.labelmap_path.iter())
            .chain(self.annotation_path.iter())
            .chain(self.result_path.iter())
    }

    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.image_path);
        join(&mut self.shadow_mask_path);
        for p in [
            &mut self.labelmap_path,
            &mut self.annotation_path,
            &mut self.result_path,
        ]
        .into_iter()
        .flatten()
        {
            join(p);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Checks that ids are unique, nonempty and usable as file stems, and
    /// that every referenced file exists.
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if e.id.is_empty() || e.id.contains(['/', '\\']) || e.id == "." || e.id == ".." {
                return Err(Error::Manifest(format!("invalid entry id {:?}", e.id)));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate entry id {:?}", e.id)));
            }
            if let Some(p) = e.paths().find(|p| !p.exists()) {
                return Err(Error::Manifest(format!(
                    "entry {:?}: {} does not exist",
                    e.id,
                    p.display()
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries: Vec<ManifestEntry> =
            serde_json::from_str(&text).map_err(|source| Error::Json {
                path: path.to_path_buf(),
                source,
            })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for e in &mut entries {
            e.resolve(base);
        }
        Self::new(entries)
    }
}
