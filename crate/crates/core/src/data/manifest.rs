//! On-disk dataset description.
//!
//! `manifest.json` is UTF-8 JSON with lexicographically sorted keys, two-space
//! indentation and a trailing LF. Tensor paths are relative to the manifest's
//! directory.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::synth::GeneratorConfig;
use crate::error::{Error, Result};
use crate::types::{AlignmentSpan, ClassId, Familiarity, Language, Split};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRecord {
    pub id: ClassId,
    pub name: String,
    pub familiarity: Familiarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Word,
    Utterance,
    Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: String,
    pub kind: ItemKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<ClassId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<Language>,
    pub split: Split,
    pub tensor: String,
    /// `[T, D]` for words and utterances, `[H, W, D]` for images.
    pub shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alignments: Vec<AlignmentSpan>,
}

/// Tensor files holding the generator's latent class prototypes, one row per class id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeFiles {
    pub audio: String,
    pub visual: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub feature_dim: usize,
    pub frame_duration: f64,
    pub classes: Vec<ClassRecord>,
    pub items: Vec<ItemRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prototypes: Option<PrototypeFiles>,
}

impl DatasetManifest {
    pub fn class(&self, id: ClassId) -> Option<&ClassRecord> {
        self.classes.iter().find(|c| c.id == id)
    }

    /// Canonical serialization: sorted keys, LF line endings, trailing newline.
    pub fn to_json(&self) -> Result<String> {
        to_canonical_json(self)
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|source| Error::Json { path: origin.to_path_buf(), source })
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    DatasetManifest::from_json(&text, &path)
}

pub fn write_manifest(dir: &Path, manifest: &DatasetManifest) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_json()?).map_err(|e| Error::io(&path, e))
}

/// Pretty JSON with object keys sorted at every level and a trailing LF.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    // serde_json's default map is ordered by key, so a round trip through
    // `Value` sorts every object.
    let value = serde_json::to_value(value).map_err(|e| Error::Contract(e.to_string()))?;
    let mut text = serde_json::to_string_pretty(&value).map_err(|e| Error::Contract(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_json_sorts_keys() {
        #[derive(Serialize)]
        struct Unsorted {
            zeta: u8,
            alpha: u8,
        }
        let text = to_canonical_json(&Unsorted { zeta: 1, alpha: 2 }).unwrap();
        assert!(text.find("alpha").unwrap() < text.find("zeta").unwrap());
        assert!(text.ends_with("}\n"));
        assert!(!text.contains('\r'));
    }

    #[test]
    fn unreadable_manifest_reports_path() {
        let err = load_manifest(Path::new("/definitely/missing/manifest.json")).unwrap_err();
        assert!(err.is_io());
        assert!(err.to_string().contains("/definitely/missing/manifest.json"));
    }
}
