//! Synthetic dataset generation and the on-disk formats.

pub mod manifest;
pub mod synth;
pub mod tensor;
pub mod validate;

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{ClassId, Familiarity, LabeledItem, Language, Payload, Split};

pub use manifest::{load_manifest, ClassRecord, DatasetManifest, ItemKind, ItemRecord};
pub use synth::{generate_dataset, GeneratorConfig, LanguageSpec, SplitCounts};
pub use tensor::{read_tensor, write_tensor, Tensor};
pub use validate::{validate_dataset, validate_dataset_with_dim, ValidationReport, Violation, ViolationKind};

/// Latent class prototypes, indexed by class id.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    pub audio: Vec<Vec<f64>>,
    pub visual: Vec<Vec<f64>>,
}

/// A dataset with every tensor loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    /// In manifest order.
    pub items: Vec<LabeledItem>,
    pub prototypes: Option<Prototypes>,
}

impl Dataset {
    /// Validates and loads the dataset whose `manifest.json` is in `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = load_manifest(dir)?;
        let report = validate_dataset(&manifest, dir);
        if let Some(first) = report.violations.first() {
            // A missing or unreadable file is an I/O problem, not bad data.
            if first.kind == ViolationKind::MissingTensor {
                let path = dir.join(
                    &manifest
                        .items
                        .iter()
                        .find(|i| Some(&i.id) == first.item.as_ref())
                        .expect("violation names a manifest item")
                        .tensor,
                );
                return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
            }
            return Err(Error::Validation(format!(
                "{} violation(s), first: {:?} {}",
                report.violations.len(),
                first.item,
                first.detail
            )));
        }

        let familiarity: BTreeMap<ClassId, Familiarity> =
            manifest.classes.iter().map(|c| (c.id, c.familiarity)).collect();
        let mut items = Vec::with_capacity(manifest.items.len());
        for record in &manifest.items {
            let tensor = read_tensor(&dir.join(&record.tensor))?;
            let payload = match record.kind {
                ItemKind::Word => Payload::Word(tensor.to_frames(&record.id, manifest.frame_duration)?),
                ItemKind::Utterance => Payload::Utterance(tensor.to_frames(&record.id, manifest.frame_duration)?),
                ItemKind::Image => Payload::Image(tensor.to_grid()?),
            };
            items.push(LabeledItem {
                id: record.id.clone(),
                payload,
                class: record.class,
                language: record.language.clone(),
                split: record.split,
                familiarity: record.class.and_then(|c| familiarity.get(&c).copied()),
                alignments: record.alignments.clone(),
            });
        }

        let prototypes = match &manifest.prototypes {
            Some(files) => {
                let rows = |rel: &str| -> Result<Vec<Vec<f64>>> {
                    let t = read_tensor(&dir.join(rel))?;
                    let width = *t.dims().last().expect("rank >= 1");
                    Ok(t.to_f64().chunks_exact(width).map(<[f64]>::to_vec).collect())
                };
                Some(Prototypes { audio: rows(&files.audio)?, visual: rows(&files.visual)? })
            }
            None => None,
        };
        Ok(Dataset { manifest, items, prototypes })
    }

    /// Writes `manifest.json` and every tensor under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        for (record, item) in self.manifest.items.iter().zip(&self.items) {
            let tensor = match &item.payload {
                Payload::Word(s) | Payload::Utterance(s) => Tensor::from_frames(s)?,
                Payload::Image(g) => Tensor::from_grid(g)?,
            };
            write_tensor(&dir.join(&record.tensor), &tensor)?;
        }
        if let (Some(files), Some(protos)) = (&self.manifest.prototypes, &self.prototypes) {
            for (rel, rows) in [(&files.audio, &protos.audio), (&files.visual, &protos.visual)] {
                let width = rows.first().map_or(0, Vec::len);
                write_tensor(&dir.join(rel), &Tensor::from_f64(vec![rows.len(), width], &rows.concat())?)?;
            }
        }
        manifest::write_manifest(dir, &self.manifest)
    }

    pub fn item(&self, id: &str) -> Option<&LabeledItem> {
        self.items.iter().find(|i| i.id == id)
    }

    pub fn class_name(&self, id: ClassId) -> String {
        self.manifest.class(id).map_or_else(|| id.to_string(), |c| c.name.clone())
    }

    pub fn classes_with(&self, familiarity: Familiarity) -> Vec<ClassId> {
        self.manifest.classes.iter().filter(|c| c.familiarity == familiarity).map(|c| c.id).collect()
    }

    pub fn languages(&self) -> Vec<Language> {
        let mut langs: Vec<Language> = Vec::new();
        for l in self.items.iter().filter_map(|i| i.language.as_ref()) {
            if !langs.contains(l) {
                langs.push(l.clone());
            }
        }
        langs
    }

    pub fn words<'a>(&'a self, split: Split, language: &'a Language) -> impl Iterator<Item = &'a LabeledItem> {
        self.items.iter().filter(move |i| i.is_word() && i.split == split && i.language.as_ref() == Some(language))
    }

    pub fn utterances<'a>(&'a self, split: Split, language: &'a Language) -> impl Iterator<Item = &'a LabeledItem> {
        self.items.iter().filter(move |i| i.is_utterance() && i.split == split && i.language.as_ref() == Some(language))
    }

    pub fn images(&self, split: Split) -> impl Iterator<Item = &LabeledItem> {
        self.items.iter().filter(move |i| i.is_image() && i.split == split)
    }
}
