//! Glue between a [`Dataset`] and the algorithms: selecting support sets,
//! assembling training data, and collecting evaluation inputs.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::attention::SimilarityHead;
use crate::data::{Dataset, GeneratorConfig, LanguageSpec, SplitCounts};
use crate::error::{Error, Result};
use crate::eval::UtteranceRef;
use crate::mining::{
    self, pair_precision, score_summaries, segment_truth, MinedPairSet, PrecisionReport, ScoreSummary, Shortage,
};
use crate::model::{init_model, Model, ModelDims, OutputActivation};
use crate::rng::RandomSource;
use crate::train::{self, BackgroundPair, Checkpoint, FinetuneData, Stage, TrainConfig};
use crate::types::{
    ClassId, Familiarity, FrameSequence, LabeledItem, Language, PixelGrid, Split, SupportPair, SupportSet,
};

fn words_of<'a>(dataset: &'a Dataset, class: ClassId, split: Split, language: &'a Language) -> Vec<&'a LabeledItem> {
    dataset.words(split, language).filter(|i| i.class == Some(class)).collect()
}

fn images_of(dataset: &Dataset, class: ClassId, split: Split) -> Vec<&LabeledItem> {
    dataset.images(split).filter(|i| i.class == Some(class)).collect()
}

/// `k` train-split word-image pairs per class, drawn without replacement.
pub fn support_set(
    dataset: &Dataset,
    classes: &[ClassId],
    k: usize,
    language: &Language,
    rng: &mut RandomSource,
) -> Result<SupportSet> {
    let mut out = BTreeMap::new();
    for &class in classes {
        let mut words = words_of(dataset, class, Split::Train, language);
        let mut images = images_of(dataset, class, Split::Train);
        if words.len() < k || images.len() < k {
            return Err(Error::Config(format!(
                "class {class} has {} train words and {} train images, support needs {k} of each",
                words.len(),
                images.len()
            )));
        }
        words.shuffle(rng);
        images.shuffle(rng);
        let pairs = words
            .iter()
            .zip(&images)
            .take(k)
            .map(|(w, g)| SupportPair {
                word: w.frames().expect("word").clone(),
                image: g.grid().expect("image").clone(),
            })
            .collect();
        out.insert(class, pairs);
    }
    SupportSet::new(out)
}

/// Train-split background words paired with same-class images; word `i`
/// takes image `i` (wrapping).
pub fn background_pairs(dataset: &Dataset, language: &Language) -> Vec<BackgroundPair> {
    let mut out = Vec::new();
    for class in dataset.classes_with(Familiarity::Background) {
        let words = words_of(dataset, class, Split::Train, language);
        let images = images_of(dataset, class, Split::Train);
        if images.is_empty() {
            continue;
        }
        for (i, w) in words.iter().enumerate() {
            out.push(BackgroundPair {
                word: w.frames().expect("word").clone(),
                image: images[i % images.len()].grid().expect("image").clone(),
                class,
                familiarity: Familiarity::Background,
            });
        }
    }
    out
}

pub fn background_words(dataset: &Dataset) -> BTreeMap<Language, Vec<FrameSequence>> {
    let bg = dataset.classes_with(Familiarity::Background);
    let mut out: BTreeMap<Language, Vec<FrameSequence>> = BTreeMap::new();
    for item in dataset.items.iter().filter(|i| i.is_word() && i.split == Split::Train) {
        if let (Some(c), Some(lang)) = (item.class, &item.language) {
            if bg.contains(&c) {
                out.entry(lang.clone()).or_default().push(item.frames().expect("word").clone());
            }
        }
    }
    out
}

pub fn background_images(dataset: &Dataset) -> Vec<PixelGrid> {
    let bg = dataset.classes_with(Familiarity::Background);
    dataset
        .images(Split::Train)
        .filter(|i| i.class.is_some_and(|c| bg.contains(&c)))
        .map(|i| i.grid().expect("image").clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningReport {
    pub language: Language,
    pub k: usize,
    pub n: usize,
    pub audio_precision: PrecisionReport,
    pub image_precision: PrecisionReport,
    pub audio_scores: BTreeMap<ClassId, ScoreSummary>,
    pub image_scores: BTreeMap<ClassId, ScoreSummary>,
    pub audio_shortages: Vec<Shortage>,
    pub image_shortages: Vec<Shortage>,
    /// Pairs per class after rank-by-rank pairing.
    pub pairs: BTreeMap<ClassId, usize>,
}

/// Mines the train-split utterances of `language` and all train-split
/// images, then pairs the results rank by rank.
pub fn mine_dataset(
    dataset: &Dataset,
    support: &SupportSet,
    n: usize,
    language: &Language,
) -> Result<(MinedPairSet, MiningReport)> {
    let utterances: Vec<&LabeledItem> = dataset.utterances(Split::Train, language).collect();
    let corpus: Vec<FrameSequence> = utterances.iter().map(|u| u.frames().expect("utterance").clone()).collect();
    let by_id: BTreeMap<&str, &LabeledItem> = utterances.iter().map(|u| (u.id.as_str(), *u)).collect();
    let images: Vec<(&str, &PixelGrid)> =
        dataset.images(Split::Train).map(|i| (i.id.as_str(), i.grid().expect("image"))).collect();
    let audio = mining::mine_audio_pairs(support, &corpus, n)?;
    let visual = mining::mine_image_pairs(support, &images, n, mining::mean_cell_embedding)?;

    let audio_truth = audio
        .per_class
        .iter()
        .map(|(c, segs)| {
            let labels = segs.iter().map(|s| segment_truth(s, &by_id[s.utterance_id.as_str()].alignments)).collect();
            (*c, labels)
        })
        .collect();
    let image_truth = visual
        .per_class
        .iter()
        .map(|(c, ms)| (*c, ms.iter().map(|m| dataset.item(&m.image_id).and_then(|i| i.class)).collect()))
        .collect();
    let pairs = mining::pair_mined(&audio, &visual, n, |id| by_id.get(id).and_then(|u| u.frames()))?;
    let report = MiningReport {
        language: language.clone(),
        k: support.k(),
        n,
        audio_precision: pair_precision(&audio_truth)?,
        image_precision: pair_precision(&image_truth)?,
        audio_scores: score_summaries(&audio, |s| s.score),
        image_scores: score_summaries(&visual, |m| m.score),
        audio_shortages: audio.shortages.clone(),
        image_shortages: visual.shortages.clone(),
        pairs: pairs.per_class.iter().map(|(c, p)| (*c, p.len())).collect(),
    };
    Ok((pairs, report))
}

/// Fine-tuning data from mined pairs, with mined segments used as raw
/// feature crops.
pub fn finetune_from_mined(dataset: &Dataset, mined: &MinedPairSet, language: &Language) -> Result<FinetuneData> {
    let mut data = FinetuneData {
        background_images: background_images(dataset),
        background_words: background_words(dataset),
        ..FinetuneData::default()
    };
    for (class, pairs) in &mined.per_class {
        for p in pairs {
            let image = dataset
                .item(&p.image.image_id)
                .and_then(LabeledItem::grid)
                .ok_or_else(|| Error::Contract(format!("mined image {} not in dataset", p.image.image_id)))?;
            data.push(*class, language, p.word.clone(), image.clone());
        }
    }
    Ok(data)
}

/// Fine-tuning data from ground-truth train pairs of `classes` in every
/// given language. Word `i` of each language pairs with image `i`.
pub fn finetune_ground_truth(dataset: &Dataset, classes: &[ClassId], languages: &[Language]) -> FinetuneData {
    let mut data = FinetuneData {
        background_images: background_images(dataset),
        background_words: background_words(dataset),
        ..FinetuneData::default()
    };
    for &class in classes {
        let images: Vec<PixelGrid> =
            images_of(dataset, class, Split::Train).iter().map(|i| i.grid().expect("image").clone()).collect();
        if images.is_empty() {
            continue;
        }
        let entry = data.classes.entry(class).or_default();
        entry.images = images;
        for lang in languages {
            let words = words_of(dataset, class, Split::Train, lang)
                .iter()
                .map(|w| w.frames().expect("word").clone())
                .collect();
            entry.words.insert(lang.clone(), words);
        }
    }
    data
}

/// Spoken words of `classes` in `split`, as `(class, frames)`.
pub fn word_queries<'a>(
    dataset: &'a Dataset,
    classes: &[ClassId],
    split: Split,
    language: &'a Language,
) -> Vec<(ClassId, &'a FrameSequence)> {
    dataset
        .words(split, language)
        .filter_map(|i| {
            let c = i.class?;
            classes.contains(&c).then(|| (c, i.frames().expect("word")))
        })
        .collect()
}

pub fn images_by_class<'a>(
    dataset: &'a Dataset,
    classes: &[ClassId],
    split: Split,
) -> BTreeMap<ClassId, Vec<&'a PixelGrid>> {
    let mut out: BTreeMap<ClassId, Vec<&PixelGrid>> = BTreeMap::new();
    for item in dataset.images(split) {
        if let Some(c) = item.class.filter(|c| classes.contains(c)) {
            out.entry(c).or_default().push(item.grid().expect("image"));
        }
    }
    out
}

/// The first `per_class` images of each class as keyword queries.
pub fn image_queries<'a>(
    dataset: &'a Dataset,
    classes: &[ClassId],
    split: Split,
    per_class: usize,
) -> Vec<(ClassId, &'a PixelGrid)> {
    images_by_class(dataset, classes, split)
        .into_iter()
        .flat_map(|(c, v)| v.into_iter().take(per_class).map(move |g| (c, g)))
        .collect()
}

pub fn utterance_refs<'a>(dataset: &'a Dataset, split: Split, language: &'a Language) -> Vec<UtteranceRef<'a>> {
    dataset
        .utterances(split, language)
        .map(|u| UtteranceRef { frames: u.frames().expect("utterance"), alignments: &u.alignments })
        .collect()
}

/// A small monolingual corpus that the default [`PipelineConfig`] learns in
/// seconds: 4 familiar, 4 novel and 16 background classes.
pub fn desk_generator() -> GeneratorConfig {
    GeneratorConfig {
        n_familiar: 4,
        n_novel: 4,
        n_background: 16,
        languages: vec![LanguageSpec { name: Language::english(), offset_scale: 0.0 }],
        words_per_class: SplitCounts { train: 60, dev: 10, test: 10 },
        images_per_class: SplitCounts { train: 60, dev: 10, test: 10 },
        noise: 0.1,
        ..GeneratorConfig::default()
    }
}

/// Everything between a dataset and a fine-tuned model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub language: Language,
    /// Support pairs per familiar class.
    pub k: usize,
    /// Mined pairs per familiar class.
    pub n: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub output: OutputActivation,
    /// Head used for training and for utterance-level VPKL scores.
    pub head: SimilarityHead,
    /// Zero skips the stage.
    pub unimodal_epochs: usize,
    pub background: TrainConfig,
    pub finetune: TrainConfig,
    pub use_background_negatives: bool,
    /// Fine-tune on ground-truth train pairs instead of mined ones.
    pub ground_truth: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            language: Language::english(),
            k: 5,
            n: 50,
            hidden_dim: 64,
            embed_dim: 32,
            output: OutputActivation::Relu,
            head: SimilarityHead::ContextCosine,
            unimodal_epochs: 0,
            background: TrainConfig { stage: Stage::Background, ..TrainConfig::default() },
            finetune: TrainConfig::default(),
            use_background_negatives: true,
            ground_truth: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub support: SupportSet,
    pub mined: Option<MinedPairSet>,
    pub mining: Option<MiningReport>,
    /// One checkpoint per stage that ran, in order, starting with the
    /// untrained model.
    pub checkpoints: Vec<Checkpoint>,
}

impl PipelineRun {
    pub fn model(&self) -> &Model {
        &self.checkpoints.last().expect("at least the untrained checkpoint").model
    }
}

/// Support selection, mining, then every training stage.
pub fn run_pipeline(dataset: &Dataset, cfg: &PipelineConfig) -> Result<PipelineRun> {
    let root = RandomSource::new(cfg.seed);
    let familiar = dataset.classes_with(Familiarity::Familiar);
    let support = support_set(dataset, &familiar, cfg.k, &cfg.language, &mut root.fork("support"))?;
    let input_dim = dataset
        .items
        .iter()
        .find_map(|i| i.frames().map(FrameSequence::dim))
        .ok_or_else(|| Error::Config("dataset has no spoken items".into()))?;
    let dims = ModelDims::new(input_dim, cfg.hidden_dim, cfg.embed_dim).with_output(cfg.output);
    let model = init_model(dims, cfg.head, &mut root.fork("init"))?;
    let mut checkpoints = vec![Checkpoint::untrained(model)];
    let last = |c: &[Checkpoint]| c.last().expect("non-empty").model.clone();

    let bg = background_pairs(dataset, &cfg.language);
    if cfg.unimodal_epochs > 0 {
        let stage = TrainConfig { stage: Stage::UnimodalInit, epochs: cfg.unimodal_epochs, ..cfg.background.clone() };
        checkpoints.push(train::unimodal_init(&last(&checkpoints), &bg, &stage)?);
    }
    if cfg.background.epochs > 0 {
        checkpoints.push(train::pretrain_background(&last(&checkpoints), &bg, &cfg.background)?);
    }

    let (mined, mining, data) = if cfg.ground_truth {
        (None, None, finetune_ground_truth(dataset, &familiar, std::slice::from_ref(&cfg.language)))
    } else {
        let (mined, report) = mine_dataset(dataset, &support, cfg.n, &cfg.language)?;
        let data = finetune_from_mined(dataset, &mined, &cfg.language)?;
        (Some(mined), Some(report), data)
    };
    checkpoints.push(train::finetune(&last(&checkpoints), &data, &cfg.finetune, cfg.use_background_negatives)?);
    Ok(PipelineRun { support, mined, mining, checkpoints })
}
