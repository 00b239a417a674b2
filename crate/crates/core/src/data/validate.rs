use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::manifest::{DatasetManifest, ItemKind};
use crate::data::tensor::read_tensor;
use crate::types::{Familiarity, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    DuplicateId,
    DuplicateClass,
    UnknownClass,
    MissingLabel,
    NovelInTrain,
    MissingTensor,
    BadTensor,
    ShapeMismatch,
    DimensionMismatch,
    BadAlignment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item: Option<String>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub items_checked: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, kind: ViolationKind, item: Option<&str>, detail: impl Into<String>) {
        self.violations.push(Violation { kind, item: item.map(str::to_string), detail: detail.into() });
    }
}

/// Checks a manifest against its tensor files under `root`, expecting
/// features of the manifest's own `feature_dim`.
pub fn validate_dataset(manifest: &DatasetManifest, root: &Path) -> ValidationReport {
    validate_dataset_with_dim(manifest, root, manifest.feature_dim)
}

/// As [`validate_dataset`], but every tensor's last axis must equal `expected_dim`.
pub fn validate_dataset_with_dim(manifest: &DatasetManifest, root: &Path, expected_dim: usize) -> ValidationReport {
    let mut report = ValidationReport { items_checked: manifest.items.len(), violations: Vec::new() };

    let mut classes = BTreeMap::new();
    for c in &manifest.classes {
        if classes.insert(c.id, c.familiarity).is_some() {
            report.push(ViolationKind::DuplicateClass, None, format!("class id {} listed twice", c.id));
        }
    }

    let mut ids = BTreeSet::new();
    for item in &manifest.items {
        let id = Some(item.id.as_str());
        if !ids.insert(item.id.as_str()) {
            report.push(ViolationKind::DuplicateId, id, "item id appears more than once");
        }

        let needs_class = item.kind != ItemKind::Utterance;
        let needs_language = item.kind != ItemKind::Image;
        if needs_class && item.class.is_none() {
            report.push(ViolationKind::MissingLabel, id, "word and image items need a class");
        }
        if needs_language && item.language.is_none() {
            report.push(ViolationKind::MissingLabel, id, "spoken items need a language");
        }
        if item.kind == ItemKind::Utterance && item.alignments.is_empty() {
            report.push(ViolationKind::MissingLabel, id, "utterance has no alignments");
        }

        let mut item_classes: Vec<_> = item.class.into_iter().collect();
        item_classes.extend(item.alignments.iter().map(|a| a.class));
        for class in item_classes {
            match classes.get(&class) {
                None => report.push(ViolationKind::UnknownClass, id, format!("class {class} not in class table")),
                Some(Familiarity::Novel) if item.split == Split::Train => report.push(
                    ViolationKind::NovelInTrain,
                    id,
                    format!("novel class {class} appears in the train split"),
                ),
                Some(_) => {}
            }
        }

        let rank = if item.kind == ItemKind::Image { 3 } else { 2 };
        if item.shape.len() != rank {
            report.push(
                ViolationKind::ShapeMismatch,
                id,
                format!("recorded shape {:?} should have rank {rank}", item.shape),
            );
        }

        let path = root.join(&item.tensor);
        if !path.is_file() {
            report.push(ViolationKind::MissingTensor, id, format!("{} does not exist", path.display()));
        } else {
            match read_tensor(&path) {
                Err(e) => report.push(ViolationKind::BadTensor, id, e.to_string()),
                Ok(t) => {
                    if t.dims() != item.shape.as_slice() {
                        report.push(
                            ViolationKind::ShapeMismatch,
                            id,
                            format!("tensor dims {:?} differ from recorded shape {:?}", t.dims(), item.shape),
                        );
                    }
                    let dim = *t.dims().last().expect("rank >= 1");
                    if dim != expected_dim {
                        report.push(
                            ViolationKind::DimensionMismatch,
                            id,
                            format!("feature dimension {dim}, expected {expected_dim}"),
                        );
                    }
                }
            }
        }

        if item.kind == ItemKind::Utterance && !item.alignments.is_empty() {
            let frames = item.shape.first().copied().unwrap_or(0);
            let mut next = 0;
            let mut contiguous = true;
            for span in &item.alignments {
                if span.start != next || span.end < span.start {
                    report.push(
                        ViolationKind::BadAlignment,
                        id,
                        format!("span [{}, {}] leaves a gap or overlap at frame {next}", span.start, span.end),
                    );
                    contiguous = false;
                    break;
                }
                next = span.end + 1;
            }
            if contiguous && next != frames {
                report.push(ViolationKind::BadAlignment, id, format!("alignments cover {next} frames of {frames}"));
            }
        }
    }
    report
}
