//! JSON dataset manifests: an array of
//! `{ "id", "street_path", "aerial_path", "rotation_deg"? }` objects.
//! Relative paths resolve against the manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::cvfm::read_feature_map;
use super::CrossViewPair;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub street_path: String,
    pub aerial_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub split: Split,
    base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn resolve(&self, relative: &str) -> PathBuf {
        let p = Path::new(relative);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Parses and validates a manifest; every referenced tensor is read once to
/// make sure it exists and decodes.
pub fn load_manifest(path: impl AsRef<Path>, split: Split) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Manifest(format!("cannot read {}: {e}", path.display())))?;
    let entries: Vec<ManifestEntry> =
        serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = DatasetManifest {
        entries,
        split,
        base_dir,
    };

    let mut seen = HashSet::new();
    for e in &manifest.entries {
        if !seen.insert(e.id.as_str()) {
            return Err(Error::Manifest(format!("duplicate id {:?}", e.id)));
        }
        if let Some(r) = e.rotation_deg {
            if !(0.0..360.0).contains(&r) {
                return Err(Error::Manifest(format!(
                    "entry {:?}: rotation_deg {r} outside [0, 360)",
                    e.id
                )));
            }
        }
        for rel in [&e.street_path, &e.aerial_path] {
            let full = manifest.resolve(rel);
            if !full.is_file() {
                return Err(Error::Manifest(format!(
                    "entry {:?}: missing file {}",
                    e.id,
                    full.display()
                )));
            }
            read_feature_map(&full)
                .map_err(|err| Error::Manifest(format!("entry {:?}: {}: {err}", e.id, full.display())))?;
        }
    }
    Ok(manifest)
}

pub fn load_pairs(manifest: &DatasetManifest) -> Result<Vec<CrossViewPair>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let street = read_feature_map(manifest.resolve(&e.street_path))?;
            let aerial = read_feature_map(manifest.resolve(&e.aerial_path))?;
            if !aerial.is_square() {
                return Err(Error::Shape(format!(
                    "entry {:?}: aerial map is not square",
                    e.id
                )));
            }
            Ok(CrossViewPair {
                id: e.id.clone(),
                street,
                aerial,
                rotation_deg: e.rotation_deg,
                planted_azimuth_deg: None,
            })
        })
        .collect()
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(entries).expect("manifest entries serialize");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
