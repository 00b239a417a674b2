//! Seeded synthetic datasets with known ground truth.
//!
//! Every class owns one latent audio prototype and one latent visual
//! prototype. A spoken word is its class prototype (plus the language's
//! per-class offset) with fresh Gaussian noise on every frame. Utterances are
//! concatenations of the split's words, so every word appears verbatim in
//! exactly one utterance and the alignments partition the utterance. An image
//! is a grid whose object rectangle carries the visual prototype; the
//! remaining cells carry noise, and optionally the class's context motif.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::manifest::{ClassRecord, DatasetManifest, ItemKind, ItemRecord, PrototypeFiles, FORMAT_VERSION};
use crate::data::{Dataset, Prototypes};
use crate::error::{Error, Result};
use crate::rng::RandomSource;
use crate::types::{
    AlignmentSpan, ClassId, Familiarity, FrameSequence, LabeledItem, Language, Payload, PixelGrid, Split,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Dev => self.dev,
            Split::Test => self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageSpec {
    pub name: Language,
    /// Per-component standard deviation of the language's per-class prototype offset.
    pub offset_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_familiar: usize,
    pub n_novel: usize,
    pub n_background: usize,
    pub languages: Vec<LanguageSpec>,
    pub feature_dim: usize,
    pub orthogonal_prototypes: bool,
    /// Spoken words per class, language and split. Novel classes get no train words.
    pub words_per_class: SplitCounts,
    /// Images per class and split. Novel classes get no train images.
    pub images_per_class: SplitCounts,
    /// Inclusive range of word durations in frames.
    pub word_frames: (usize, usize),
    /// Inclusive range of words per utterance.
    pub utterance_words: (usize, usize),
    pub grid_height: usize,
    pub grid_width: usize,
    /// Fraction of grid cells covered by the object rectangle.
    pub object_fraction: f64,
    /// Standard deviation of the per-component Gaussian noise.
    pub noise: f64,
    /// When set, this fraction of every class's images (per split) also
    /// shows the class's context motif.
    pub context_confound: Option<f64>,
    pub frame_duration: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_familiar: 13,
            n_novel: 20,
            n_background: 8,
            languages: vec![
                LanguageSpec { name: Language::english(), offset_scale: 0.0 },
                LanguageSpec { name: Language::new("dutch"), offset_scale: 0.5 },
                LanguageSpec { name: Language::new("french"), offset_scale: 0.5 },
            ],
            feature_dim: 48,
            orthogonal_prototypes: true,
            words_per_class: SplitCounts { train: 20, dev: 10, test: 10 },
            images_per_class: SplitCounts { train: 20, dev: 10, test: 10 },
            word_frames: (5, 8),
            utterance_words: (2, 4),
            grid_height: 4,
            grid_width: 4,
            object_fraction: 0.25,
            noise: 0.1,
            context_confound: None,
            frame_duration: FrameSequence::DEFAULT_FRAME_DURATION,
        }
    }
}

impl GeneratorConfig {
    pub fn n_classes(&self) -> usize {
        self.n_familiar + self.n_novel + self.n_background
    }

    pub fn language_names(&self) -> Vec<Language> {
        self.languages.iter().map(|l| l.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_classes() == 0 {
            return fail("generator needs at least one class".into());
        }
        if self.languages.is_empty() {
            return fail("generator needs at least one language".into());
        }
        if self.feature_dim == 0 || self.grid_height == 0 || self.grid_width == 0 {
            return fail("feature dimension and grid size must be >= 1".into());
        }
        if self.orthogonal_prototypes && self.feature_dim < self.n_classes() {
            return fail(format!(
                "{} orthogonal prototypes need feature_dim >= {}, got {}",
                self.n_classes(),
                self.n_classes(),
                self.feature_dim
            ));
        }
        for (name, (lo, hi)) in [("word_frames", self.word_frames), ("utterance_words", self.utterance_words)] {
            if lo == 0 || lo > hi {
                return fail(format!("{name} range ({lo}, {hi}) must satisfy 1 <= min <= max"));
            }
        }
        if !(self.object_fraction > 0.0 && self.object_fraction <= 1.0) {
            return fail(format!("object_fraction {} not in (0, 1]", self.object_fraction));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return fail(format!("noise amplitude {} must be >= 0", self.noise));
        }
        if let Some(f) = self.context_confound {
            if !(0.0..=1.0).contains(&f) {
                return fail(format!("context confound fraction {f} not in [0, 1]"));
            }
        }
        if self.languages.iter().any(|l| !(l.offset_scale.is_finite() && l.offset_scale >= 0.0)) {
            return fail("language offset scales must be >= 0".into());
        }
        if !(self.frame_duration.is_finite() && self.frame_duration > 0.0) {
            return fail("frame_duration must be positive".into());
        }
        Ok(())
    }

    fn classes(&self) -> Vec<ClassRecord> {
        let groups = [
            (Familiarity::Familiar, "familiar", self.n_familiar),
            (Familiarity::Novel, "novel", self.n_novel),
            (Familiarity::Background, "background", self.n_background),
        ];
        let mut out = Vec::new();
        for (familiarity, prefix, n) in groups {
            for i in 0..n {
                out.push(ClassRecord { id: ClassId(out.len() as u32), name: format!("{prefix}_{i:02}"), familiarity });
            }
        }
        out
    }

    /// Object rectangle height and width.
    fn object_shape(&self) -> (usize, usize) {
        let cells = self.grid_height * self.grid_width;
        let area = ((self.object_fraction * cells as f64).round() as usize).clamp(1, cells);
        let aspect = self.grid_height as f64 / self.grid_width as f64;
        let h = ((area as f64 * aspect).sqrt().round() as usize).clamp(1, self.grid_height);
        let w = ((area as f64 / h as f64).round() as usize).clamp(1, self.grid_width);
        (h, w)
    }
}

/// Generates a dataset in memory. Tensor values are rounded through `f32`, so
/// the result equals what [`Dataset::load`] returns after [`Dataset::save`].
pub fn generate_dataset(cfg: &GeneratorConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let rng = RandomSource::new(seed);
    let classes = cfg.classes();
    let f = cfg.feature_dim;

    let mut proto_rng = rng.fork("prototypes");
    let audio = prototypes(&mut proto_rng, classes.len(), f, cfg.orthogonal_prototypes);
    let visual = prototypes(&mut proto_rng, classes.len(), f, cfg.orthogonal_prototypes);
    let motifs: Vec<Vec<f64>> = (0..classes.len()).map(|_| gaussian(&mut proto_rng, f, 1.0)).collect();
    let offsets: Vec<Vec<Vec<f64>>> = cfg
        .languages
        .iter()
        .map(|lang| (0..classes.len()).map(|_| gaussian(&mut proto_rng, f, lang.offset_scale)).collect())
        .collect();
    let audio = round_rows(audio);
    let visual = round_rows(visual);

    let mut items: Vec<LabeledItem> = Vec::new();
    let mut word_rng = rng.fork("words");
    let mut utt_rng = rng.fork("utterances");
    for split in Split::ALL {
        for (li, lang) in cfg.languages.iter().enumerate() {
            let mut words = Vec::new();
            for class in &classes {
                let count = if class.familiarity == Familiarity::Novel && split == Split::Train {
                    0
                } else {
                    cfg.words_per_class.get(split)
                };
                let base: Vec<f64> = audio[class.id.0 as usize]
                    .iter()
                    .zip(&offsets[li][class.id.0 as usize])
                    .map(|(p, o)| p + o)
                    .collect();
                for i in 0..count {
                    let id = format!("w-{}-{}-{:03}-{:03}", lang.name, split.as_str(), class.id.0, i);
                    let len = word_rng.random_range(cfg.word_frames.0..=cfg.word_frames.1);
                    let mut data = Vec::with_capacity(len * f);
                    for _ in 0..len {
                        data.extend(base.iter().map(|p| p + cfg.noise * normal(&mut word_rng)));
                    }
                    let seq = FrameSequence::with_duration(round_f32(data), f, cfg.frame_duration, id.clone())?;
                    words.push(LabeledItem {
                        id,
                        payload: Payload::Word(seq),
                        class: Some(class.id),
                        language: Some(lang.name.clone()),
                        split,
                        familiarity: Some(class.familiarity),
                        alignments: Vec::new(),
                    });
                }
            }
            let utterances = build_utterances(cfg, split, &lang.name, &words, &mut utt_rng)?;
            items.extend(words);
            items.extend(utterances);
        }
    }

    let (obj_h, obj_w) = cfg.object_shape();
    let mut img_rng = rng.fork("images");
    for split in Split::ALL {
        for class in &classes {
            let count = if class.familiarity == Familiarity::Novel && split == Split::Train {
                0
            } else {
                cfg.images_per_class.get(split)
            };
            let with_motif = cfg.context_confound.map_or(0, |frac| (frac * count as f64).round() as usize);
            let mut motif_flags: Vec<bool> = (0..count).map(|i| i < with_motif).collect();
            motif_flags.shuffle(&mut img_rng);
            for (i, has_motif) in motif_flags.into_iter().enumerate() {
                let id = format!("i-{}-{:03}-{:03}", split.as_str(), class.id.0, i);
                let grid = render_image(
                    cfg,
                    (obj_h, obj_w),
                    &visual[class.id.0 as usize],
                    has_motif.then(|| motifs[class.id.0 as usize].as_slice()),
                    &mut img_rng,
                )?;
                items.push(LabeledItem {
                    id,
                    payload: Payload::Image(grid),
                    class: Some(class.id),
                    language: None,
                    split,
                    familiarity: Some(class.familiarity),
                    alignments: Vec::new(),
                });
            }
        }
    }

    let records = items.iter().map(item_record).collect();
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        seed,
        feature_dim: f,
        frame_duration: cfg.frame_duration,
        classes,
        items: records,
        generator: Some(cfg.clone()),
        prototypes: Some(PrototypeFiles {
            audio: "prototypes/audio.mmt".into(),
            visual: "prototypes/visual.mmt".into(),
        }),
    };
    Ok(Dataset { manifest, items, prototypes: Some(Prototypes { audio, visual }) })
}

fn build_utterances(
    cfg: &GeneratorConfig,
    split: Split,
    lang: &Language,
    words: &[LabeledItem],
    rng: &mut RandomSource,
) -> Result<Vec<LabeledItem>> {
    let mut order: Vec<usize> = (0..words.len()).collect();
    order.shuffle(rng);
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < order.len() {
        let n = rng.random_range(cfg.utterance_words.0..=cfg.utterance_words.1).min(order.len() - pos);
        let mut data = Vec::new();
        let mut alignments = Vec::new();
        let mut frame = 0;
        for &wi in &order[pos..pos + n] {
            let word = &words[wi];
            let seq = word.frames().expect("words carry frames");
            data.extend_from_slice(seq.as_slice());
            alignments.push(AlignmentSpan {
                class: word.class.expect("words carry a class"),
                start: frame,
                end: frame + seq.len() - 1,
                word_id: Some(word.id.clone()),
            });
            frame += seq.len();
        }
        let id = format!("u-{}-{}-{:04}", lang, split.as_str(), out.len());
        let seq = FrameSequence::with_duration(data, cfg.feature_dim, cfg.frame_duration, id.clone())?;
        out.push(LabeledItem {
            id,
            payload: Payload::Utterance(seq),
            class: None,
            language: Some(lang.clone()),
            split,
            familiarity: None,
            alignments,
        });
        pos += n;
    }
    Ok(out)
}

fn render_image(
    cfg: &GeneratorConfig,
    (obj_h, obj_w): (usize, usize),
    prototype: &[f64],
    motif: Option<&[f64]>,
    rng: &mut RandomSource,
) -> Result<PixelGrid> {
    let (h, w, f) = (cfg.grid_height, cfg.grid_width, cfg.feature_dim);
    let top = rng.random_range(0..=h - obj_h);
    let left = rng.random_range(0..=w - obj_w);
    let in_object = |p: usize| {
        let (r, c) = (p / w, p % w);
        (top..top + obj_h).contains(&r) && (left..left + obj_w).contains(&c)
    };
    let mut motif_cells = Vec::new();
    if motif.is_some() {
        let mut free: Vec<usize> = (0..h * w).filter(|&p| !in_object(p)).collect();
        free.shuffle(rng);
        free.truncate((h * w / 8).max(1));
        motif_cells = free;
    }
    let mut data = Vec::with_capacity(h * w * f);
    for p in 0..h * w {
        let base: Option<&[f64]> = if in_object(p) {
            Some(prototype)
        } else if motif_cells.contains(&p) {
            motif
        } else {
            None
        };
        for d in 0..f {
            let v = base.map_or(0.0, |b| b[d]) + cfg.noise * normal(rng);
            data.push(v);
        }
    }
    PixelGrid::new(round_f32(data), f, h, w)
}

/// Class prototypes with per-component RMS 1 (norm `sqrt(dim)`).
fn prototypes(rng: &mut RandomSource, n: usize, dim: usize, orthogonal: bool) -> Vec<Vec<f64>> {
    let target = (dim as f64).sqrt();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v = gaussian(rng, dim, 1.0);
        if orthogonal {
            for r in &rows {
                let proj: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum::<f64>() / (target * target);
                v.iter_mut().zip(r).for_each(|(a, b)| *a -= proj * b);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        if orthogonal {
            v.iter_mut().for_each(|x| *x *= target / norm);
        }
        rows.push(v);
    }
    rows
}

fn gaussian(rng: &mut RandomSource, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| scale * normal(rng)).collect()
}

fn normal(rng: &mut RandomSource) -> f64 {
    rng.sample(StandardNormal)
}

fn round_f32(values: Vec<f64>) -> Vec<f64> {
    values.into_iter().map(|v| f64::from(v as f32)).collect()
}

fn round_rows(rows: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    rows.into_iter().map(round_f32).collect()
}

pub(crate) fn tensor_path(id: &str) -> String {
    format!("tensors/{id}.mmt")
}

fn item_record(item: &LabeledItem) -> ItemRecord {
    let (kind, shape) = match &item.payload {
        Payload::Word(s) => (ItemKind::Word, vec![s.len(), s.dim()]),
        Payload::Utterance(s) => (ItemKind::Utterance, vec![s.len(), s.dim()]),
        Payload::Image(g) => (ItemKind::Image, vec![g.height(), g.width(), g.dim()]),
    };
    ItemRecord {
        id: item.id.clone(),
        kind,
        class: item.class,
        language: item.language.clone(),
        split: item.split,
        tensor: tensor_path(&item.id),
        shape,
        alignments: item.alignments.clone(),
    }
}

/// Counts of generated items per (kind, split), for reports.
pub fn item_counts(dataset: &Dataset) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for r in &dataset.manifest.items {
        let kind = match r.kind {
            ItemKind::Word => "word",
            ItemKind::Utterance => "utterance",
            ItemKind::Image => "image",
        };
        *out.entry(format!("{kind}/{}", r.split.as_str())).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            n_familiar: 3,
            n_novel: 2,
            n_background: 2,
            languages: vec![LanguageSpec { name: Language::english(), offset_scale: 0.0 }],
            feature_dim: 8,
            words_per_class: SplitCounts { train: 4, dev: 2, test: 2 },
            images_per_class: SplitCounts { train: 4, dev: 2, test: 2 },
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn orthogonal_prototypes_are_orthogonal() {
        let d = generate_dataset(&small(), 1).unwrap();
        let protos = d.prototypes.unwrap();
        for (i, a) in protos.audio.iter().enumerate() {
            for (j, b) in protos.audio.iter().enumerate() {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                if i == j {
                    assert!((dot - 8.0).abs() < 1e-4);
                } else {
                    assert!(dot.abs() < 1e-4, "{i} {j} {dot}");
                }
            }
        }
    }

    #[test]
    fn novel_classes_skip_train_split() {
        let d = generate_dataset(&small(), 2).unwrap();
        for item in &d.items {
            if item.familiarity == Some(Familiarity::Novel) {
                assert_ne!(item.split, Split::Train, "{}", item.id);
            }
        }
    }

    #[test]
    fn every_word_lives_in_exactly_one_utterance() {
        let d = generate_dataset(&small(), 3).unwrap();
        let mut seen = BTreeMap::new();
        for u in d.items.iter().filter(|i| i.is_utterance()) {
            let frames = u.frames().unwrap();
            for span in &u.alignments {
                let word_id = span.word_id.clone().unwrap();
                *seen.entry(word_id.clone()).or_insert(0) += 1;
                let word = d.item(&word_id).unwrap().frames().unwrap();
                for t in 0..word.len() {
                    assert_eq!(word.frame(t), frames.frame(span.start + t));
                }
            }
        }
        let n_words = d.items.iter().filter(|i| i.is_word()).count();
        assert_eq!(seen.len(), n_words);
        assert!(seen.values().all(|&c| c == 1));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = small();
        c.feature_dim = 4;
        assert!(matches!(generate_dataset(&c, 0), Err(Error::Config(_))));
        let mut c = small();
        c.noise = -1.0;
        assert!(c.validate().is_err());
        let mut c = small();
        c.word_frames = (3, 2);
        assert!(c.validate().is_err());
    }

    #[test]
    fn object_shape_matches_fraction() {
        let c = GeneratorConfig::default();
        assert_eq!(c.object_shape(), (2, 2));
        let c = GeneratorConfig { grid_height: 3, grid_width: 5, object_fraction: 1.0, ..GeneratorConfig::default() };
        assert_eq!(c.object_shape(), (3, 5));
    }
}
