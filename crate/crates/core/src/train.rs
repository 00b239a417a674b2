//! Staged training: random init, unimodal init, background pretraining and
//! fine-tuning.
//!
//! Every stage runs the same loop. Items are grouped by class, shuffled within
//! each class, then interleaved round-robin and cut into batches of `B`.
//! Parameters are updated by gradient descent with momentum. Each epoch draws
//! from its own forked random stream, so a run depends only on
//! `(seed, data, config)`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{self, SimilarityHead};
use crate::data::manifest::to_canonical_json;
use crate::data::tensor::{read_tensor, write_tensor, Tensor};
use crate::error::{Error, Result};
use crate::losses::{self, Anchor, BatchWord, EncodedBatch, LossConfig};
use crate::model::{Activations, Branch, Model, ModelDims};
use crate::rng::RandomSource;
use crate::types::{ClassId, Familiarity, FrameSequence, Language, PixelGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Random,
    UnimodalInit,
    Background,
    Finetune,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Random => "random",
            Stage::UnimodalInit => "unimodal_init",
            Stage::Background => "background",
            Stage::Finetune => "finetune",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
    pub momentum: f64,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage: Stage::Finetune,
            epochs: 20,
            batch_size: 8,
            step_size: 1e-2,
            momentum: 0.9,
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Zero epochs and a zero step size are allowed and leave the model as is.
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.step_size.is_finite() && self.step_size >= 0.0) {
            return Err(Error::Config(format!("step size {} must be finite and >= 0", self.step_size)));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::Config(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        self.loss.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub stage: Stage,
    /// Epochs completed.
    pub epoch: usize,
    /// Mean training-batch loss of each completed epoch, in order.
    pub loss_trace: Vec<f64>,
    pub config: Option<TrainConfig>,
}

impl Checkpoint {
    pub fn untrained(model: Model) -> Self {
        let mut model = model;
        model.round_to_f32();
        Checkpoint { model, stage: Stage::Random, epoch: 0, loss_trace: Vec::new(), config: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointSidecar {
    format_version: u32,
    dims: ModelDims,
    head: SimilarityHead,
    stage: Stage,
    epoch: usize,
    loss_trace: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<TrainConfig>,
    params_sha256: String,
}

/// JSON sidecar path next to a checkpoint tensor: `model.mmt` → `model.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes the parameters as a rank-1 tensor at `path` and the metadata
/// sidecar next to it.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let tensor = Tensor::from_f64(vec![ckpt.model.params().len()], ckpt.model.params())?;
    write_tensor(path, &tensor)?;
    let sidecar = CheckpointSidecar {
        format_version: 1,
        dims: ckpt.model.dims(),
        head: ckpt.model.head_kind(),
        stage: ckpt.stage,
        epoch: ckpt.epoch,
        loss_trace: ckpt.loss_trace.clone(),
        config: ckpt.config.clone(),
        params_sha256: ckpt.model.checksum(),
    };
    let side = sidecar_path(path);
    fs::write(&side, to_canonical_json(&sidecar)?).map_err(|e| Error::io(&side, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: CheckpointSidecar =
        serde_json::from_str(&text).map_err(|source| Error::Json { path: side.clone(), source })?;
    let tensor = read_tensor(path)?;
    if tensor.dims().len() != 1 {
        return Err(Error::Format {
            field: "rank",
            detail: format!("checkpoint tensor has rank {}, expected 1", tensor.dims().len()),
        });
    }
    let model = Model::from_params(meta.dims, meta.head, tensor.to_f64())?;
    if model.checksum() != meta.params_sha256 {
        return Err(Error::Validation(format!(
            "{} does not match the checksum recorded in {}",
            path.display(),
            side.display()
        )));
    }
    Ok(Checkpoint { model, stage: meta.stage, epoch: meta.epoch, loss_trace: meta.loss_trace, config: meta.config })
}

/// A labelled word-image pair from the background classes.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundPair {
    pub word: FrameSequence,
    pub image: PixelGrid,
    pub class: ClassId,
    pub familiarity: Familiarity,
}

/// Training pairs for fine-tuning, grouped by class.
///
/// Anchor `i` of a class uses image `i`, and word `i` of each language
/// (indices wrap), which pairs mined words and images rank by rank.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FinetuneData {
    pub classes: BTreeMap<ClassId, ClassPairs>,
    /// Extra negatives used when background negatives are enabled.
    pub background_images: Vec<PixelGrid>,
    pub background_words: BTreeMap<Language, Vec<FrameSequence>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClassPairs {
    pub words: BTreeMap<Language, Vec<FrameSequence>>,
    pub images: Vec<PixelGrid>,
}

impl ClassPairs {
    fn anchors(&self) -> usize {
        let words = self.words.values().map(Vec::len).max().unwrap_or(0);
        if self.images.is_empty() || words == 0 {
            0
        } else {
            words.max(self.images.len())
        }
    }
}

impl FinetuneData {
    pub fn push(&mut self, class: ClassId, language: &Language, word: FrameSequence, image: PixelGrid) {
        let entry = self.classes.entry(class).or_default();
        entry.words.entry(language.clone()).or_default().push(word);
        entry.images.push(image);
    }

    pub fn pair_count(&self) -> usize {
        self.classes.values().map(ClassPairs::anchors).sum()
    }

    /// Anchor slots `(class, index)` in round-robin class order, each class
    /// shuffled by `rng`.
    fn schedule(&self, rng: &mut RandomSource) -> Vec<(ClassId, usize)> {
        let groups: BTreeMap<ClassId, Vec<usize>> =
            self.classes.iter().map(|(c, p)| (*c, (0..p.anchors()).collect())).collect();
        round_robin(groups, rng)
    }

    /// Raw-feature batch for the given anchor slots, with negatives sampled
    /// from other classes (and background images when requested).
    pub fn batch(
        &self,
        slots: &[(ClassId, usize)],
        n_neg: usize,
        use_background_negatives: bool,
        rng: &mut RandomSource,
    ) -> Result<EncodedBatch> {
        let mut batch = EncodedBatch::default();
        for &(class, i) in slots {
            let pairs = self
                .classes
                .get(&class)
                .ok_or_else(|| Error::Contract(format!("class {class} has no training pairs")))?;
            let mut anchor =
                Anchor { image: push_image(&mut batch, &pairs.images[i % pairs.images.len()]), ..Anchor::default() };
            for (lang, words) in &pairs.words {
                if words.is_empty() {
                    continue;
                }
                anchor.words.insert(lang.clone(), push_word(&mut batch, &words[i % words.len()], lang));
                anchor.alt_words.insert(lang.clone(), push_word(&mut batch, &words[(i + 1) % words.len()], lang));
            }

            let others: Vec<&ClassPairs> = self.classes.iter().filter(|(c, _)| **c != class).map(|(_, p)| p).collect();
            let mut image_pool: Vec<&PixelGrid> = others.iter().flat_map(|p| &p.images).collect();
            if use_background_negatives {
                image_pool.extend(&self.background_images);
            }
            if !image_pool.is_empty() {
                for _ in 0..n_neg {
                    let img = image_pool[rng.random_range(0..image_pool.len())];
                    anchor.neg_images.push(push_image(&mut batch, img));
                }
            }
            for lang in pairs.words.keys() {
                let mut pool: Vec<&FrameSequence> = others.iter().filter_map(|p| p.words.get(lang)).flatten().collect();
                if use_background_negatives {
                    pool.extend(self.background_words.get(lang).into_iter().flatten());
                }
                let mut negs = Vec::new();
                if !pool.is_empty() {
                    for _ in 0..n_neg {
                        negs.push(push_word(&mut batch, pool[rng.random_range(0..pool.len())], lang));
                    }
                }
                anchor.neg_words.insert(lang.clone(), negs);
            }
            batch.anchors.push(anchor);
        }
        Ok(batch)
    }
}

fn push_image(batch: &mut EncodedBatch, image: &PixelGrid) -> usize {
    batch.images.push(image.clone());
    batch.images.len() - 1
}

fn push_word(batch: &mut EncodedBatch, frames: &FrameSequence, lang: &Language) -> usize {
    batch.words.push(BatchWord { frames: frames.clone(), language: lang.clone() });
    batch.words.len() - 1
}

/// Interleaves shuffled class groups: first item of every class, then the second, ...
fn round_robin<T: Copy>(groups: BTreeMap<ClassId, Vec<T>>, rng: &mut RandomSource) -> Vec<(ClassId, T)> {
    let mut groups: Vec<(ClassId, Vec<T>)> = groups.into_iter().collect();
    for (_, g) in &mut groups {
        g.shuffle(rng);
    }
    let longest = groups.iter().map(|(_, g)| g.len()).max().unwrap_or(0);
    let mut order = Vec::new();
    for r in 0..longest {
        for (c, g) in &groups {
            if let Some(item) = g.get(r) {
                order.push((*c, *item));
            }
        }
    }
    order
}

/// Encodes a raw-feature batch, evaluates the multimodal objective and
/// back-propagates it to the model parameters.
pub fn objective_with_grad(model: &Model, raw: &EncodedBatch, cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    let enc = Encoded::new(model, raw)?;
    let out = losses::multimodal_objective(&enc.batch, model.head_kind(), cfg)?;
    let grad = enc.backward(model, raw, &out.word_grads, &out.image_grads);
    Ok((out.loss, grad))
}

/// Hinge retrieval loss over word `i` ↔ image `i` of `pairs` and its
/// parameter gradient.
pub fn hinge_with_grad(model: &Model, pairs: &[(&FrameSequence, &PixelGrid)]) -> Result<(f64, Vec<f64>)> {
    let raw = EncodedBatch {
        words: pairs.iter().map(|(w, _)| BatchWord { frames: (*w).clone(), language: Language::english() }).collect(),
        images: pairs.iter().map(|(_, g)| (*g).clone()).collect(),
        anchors: Vec::new(),
    };
    let enc = Encoded::new(model, &raw)?;
    let head = model.head_kind();
    let n = pairs.len();
    let mut sim = vec![vec![0.0; n]; n];
    for (i, row) in sim.iter_mut().enumerate() {
        for (j, s) in row.iter_mut().enumerate() {
            *s = attention::train_score(head, &enc.batch.words[i].frames, &enc.batch.images[j])?;
        }
    }
    let (loss, d_sim) = losses::hinge_retrieval_loss_grad(&sim)?;
    let mut word_grads: Vec<Vec<f64>> = enc.batch.words.iter().map(|w| vec![0.0; w.frames.as_slice().len()]).collect();
    let mut image_grads: Vec<Vec<f64>> = enc.batch.images.iter().map(|g| vec![0.0; g.as_slice().len()]).collect();
    for i in 0..n {
        for j in 0..n {
            if d_sim[i][j] != 0.0 {
                attention::train_backward(
                    head,
                    &enc.batch.words[i].frames,
                    &enc.batch.images[j],
                    d_sim[i][j],
                    &mut word_grads[i],
                    &mut image_grads[j],
                )?;
            }
        }
    }
    Ok((loss, enc.backward(model, &raw, &word_grads, &image_grads)))
}

/// Within-modality InfoNCE: each anchor word (image) against a same-class
/// word (image) and words (images) of other classes. Both sides score by
/// the dot product of max-pooled embeddings; for images the pool runs over
/// cells.
fn unimodal_with_grad(
    model: &Model,
    pairs: &[BackgroundPair],
    slots: &[(ClassId, usize)],
    by_class: &BTreeMap<ClassId, Vec<usize>>,
    n_neg: usize,
    rng: &mut RandomSource,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; model.params().len()];
    let mut loss = 0.0;
    let weight = 1.0 / slots.len() as f64;
    for &(class, i) in slots {
        let same = &by_class[&class];
        let positive = if same.len() > 1 {
            let mut j = same[rng.random_range(0..same.len())];
            while j == i {
                j = same[rng.random_range(0..same.len())];
            }
            j
        } else {
            i
        };
        let others: Vec<usize> = (0..pairs.len()).filter(|&k| pairs[k].class != class).collect();
        let negatives: Vec<usize> = if others.is_empty() {
            Vec::new()
        } else {
            (0..n_neg).map(|_| others[rng.random_range(0..others.len())]).collect()
        };

        for branch in [Branch::Audio, Branch::Vision] {
            let raw = |k: usize| -> Result<FrameSequence> {
                match branch {
                    Branch::Audio => Ok(pairs[k].word.clone()),
                    Branch::Vision => {
                        let g = &pairs[k].image;
                        FrameSequence::new(g.as_slice().to_vec(), g.dim(), "image")
                    }
                }
            };
            let mut members = vec![i, positive];
            members.extend(&negatives);
            let inputs: Vec<FrameSequence> = members.iter().map(|&k| raw(k)).collect::<Result<_>>()?;
            let mut acts = Vec::with_capacity(inputs.len());
            let mut embedded = Vec::with_capacity(inputs.len());
            for x in &inputs {
                let a = model.forward(branch, x.as_slice())?;
                embedded.push(FrameSequence::new(a.output.clone(), model.dims().embed_dim, x.source_id())?);
                acts.push(a);
            }
            let (anchor, pos, negs) = (&embedded[0], &embedded[1], &embedded[2..]);
            let s_pos = attention::word_similarity(anchor, pos)?;
            let neg_a = negs.iter().map(|n| attention::word_similarity(anchor, n)).collect::<Result<Vec<_>>>()?;
            let neg_b = negs.iter().map(|n| attention::word_similarity(n, pos)).collect::<Result<Vec<_>>>()?;
            let g = losses::infonce_pair_grad(s_pos, &neg_a, &neg_b)?;
            loss += weight * g.loss;

            let mut d: Vec<Vec<f64>> = embedded.iter().map(|e| vec![0.0; e.as_slice().len()]).collect();
            let (d0, rest) = d.split_at_mut(1);
            let (d1, dn) = rest.split_at_mut(1);
            attention::word_similarity_backward(anchor, pos, weight * g.d_pos, &mut d0[0], &mut d1[0])?;
            for (k, n) in negs.iter().enumerate() {
                attention::word_similarity_backward(anchor, n, weight * g.d_neg_a[k], &mut d0[0], &mut dn[k])?;
                attention::word_similarity_backward(n, pos, weight * g.d_neg_b[k], &mut dn[k], &mut d1[0])?;
            }
            for ((x, a), dz) in inputs.iter().zip(&acts).zip(&d) {
                model.backward(branch, x.as_slice(), a, dz, &mut grad);
            }
        }
    }
    Ok((loss, grad))
}

/// Encoder activations for every word and image of a raw batch.
struct Encoded {
    batch: EncodedBatch,
    word_acts: Vec<Activations>,
    image_acts: Vec<Activations>,
}

impl Encoded {
    fn new(model: &Model, raw: &EncodedBatch) -> Result<Self> {
        let d = model.dims().embed_dim;
        let mut batch = EncodedBatch {
            words: Vec::with_capacity(raw.words.len()),
            images: Vec::with_capacity(raw.images.len()),
            anchors: raw.anchors.clone(),
        };
        let mut word_acts = Vec::with_capacity(raw.words.len());
        for w in &raw.words {
            let a = model.forward(Branch::Audio, w.frames.as_slice())?;
            batch.words.push(BatchWord {
                frames: FrameSequence::with_duration(
                    a.output.clone(),
                    d,
                    w.frames.frame_duration(),
                    w.frames.source_id(),
                )?,
                language: w.language.clone(),
            });
            word_acts.push(a);
        }
        let mut image_acts = Vec::with_capacity(raw.images.len());
        for g in &raw.images {
            let a = model.forward(Branch::Vision, g.as_slice())?;
            batch.images.push(PixelGrid::new(a.output.clone(), d, g.height(), g.width())?);
            image_acts.push(a);
        }
        Ok(Encoded { batch, word_acts, image_acts })
    }

    fn backward(
        &self,
        model: &Model,
        raw: &EncodedBatch,
        word_grads: &[Vec<f64>],
        image_grads: &[Vec<f64>],
    ) -> Vec<f64> {
        let mut grad = vec![0.0; model.params().len()];
        for ((w, a), dz) in raw.words.iter().zip(&self.word_acts).zip(word_grads) {
            model.backward(Branch::Audio, w.frames.as_slice(), a, dz, &mut grad);
        }
        for ((g, a), dz) in raw.images.iter().zip(&self.image_acts).zip(image_grads) {
            model.backward(Branch::Vision, g.as_slice(), a, dz, &mut grad);
        }
        grad
    }
}

/// The shared optimisation loop. `step` returns the batch loss and gradient
/// for the scheduled slots of one batch.
fn optimise<F>(
    model: &Model,
    cfg: &TrainConfig,
    stage: Stage,
    schedule: impl Fn(&mut RandomSource) -> Vec<(ClassId, usize)>,
    mut step: F,
) -> Result<Checkpoint>
where
    F: FnMut(&Model, &[(ClassId, usize)], &mut RandomSource) -> Result<(f64, Vec<f64>)>,
{
    cfg.validate()?;
    let mut model = model.clone();
    let mut velocity = vec![0.0; model.params().len()];
    let mut trace = Vec::with_capacity(cfg.epochs);
    let root = RandomSource::new(cfg.seed).fork(stage.as_str());

    for epoch in 0..cfg.epochs {
        let mut rng = root.fork_indexed("epoch", epoch as u64);
        let order = schedule(&mut rng);
        if order.is_empty() {
            return Err(Error::Contract(format!("{} stage has no training items", stage.as_str())));
        }
        let mut total = 0.0;
        let mut batches = 0usize;
        for slots in order.chunks(cfg.batch_size) {
            let (loss, grad, bad) = match step(&model, slots, &mut rng) {
                // Non-finite scores rejected inside the loss are divergence too.
                Err(Error::Numeric(what)) => (f64::NAN, Vec::new(), Some(what)),
                Err(e) => return Err(e),
                Ok((loss, grad)) => {
                    let bad = if !loss.is_finite() {
                        Some(format!("loss became {loss}"))
                    } else if grad.iter().any(|g| !g.is_finite()) {
                        Some("gradient became non-finite".to_string())
                    } else {
                        None
                    };
                    (loss, grad, bad)
                }
            };
            if let Some(reason) = bad {
                let mut snapshot = model.clone();
                snapshot.round_to_f32();
                return Err(Error::Diverged {
                    reason: format!("{reason} in batch {batches}"),
                    checkpoint: Box::new(Checkpoint {
                        model: snapshot,
                        stage,
                        epoch,
                        loss_trace: trace,
                        config: Some(cfg.clone()),
                    }),
                });
            }
            total += loss;
            batches += 1;
            for ((p, v), g) in model.params_mut().iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v - cfg.step_size * g;
                *p += *v;
            }
        }
        trace.push(total / batches as f64);
    }
    // Checkpoints hold f32 parameters; rounding here keeps the in-memory
    // model identical to what a reload produces.
    if cfg.epochs > 0 {
        model.round_to_f32();
    }
    Ok(Checkpoint { model, stage, epoch: cfg.epochs, loss_trace: trace, config: Some(cfg.clone()) })
}

fn check_background(pairs: &[BackgroundPair]) -> Result<()> {
    if let Some(p) = pairs.iter().find(|p| p.familiarity != Familiarity::Background) {
        return Err(Error::Validation(format!(
            "class {} is {:?}, background stages accept only background classes",
            p.class, p.familiarity
        )));
    }
    Ok(())
}

fn group_by_class(pairs: &[BackgroundPair]) -> BTreeMap<ClassId, Vec<usize>> {
    let mut groups: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for (i, p) in pairs.iter().enumerate() {
        groups.entry(p.class).or_default().push(i);
    }
    groups
}

/// Background pretraining on the hinge retrieval loss.
pub fn pretrain_background(model: &Model, pairs: &[BackgroundPair], cfg: &TrainConfig) -> Result<Checkpoint> {
    check_background(pairs)?;
    let groups = group_by_class(pairs);
    // Same-class items in one batch would be scored as negatives of each
    // other, so a batch never holds more items than there are classes.
    let cfg = &TrainConfig { batch_size: cfg.batch_size.min(groups.len().max(1)), ..cfg.clone() };
    optimise(
        model,
        cfg,
        Stage::Background,
        |rng| round_robin(groups.clone(), rng),
        |m, slots, _| {
            let batch: Vec<(&FrameSequence, &PixelGrid)> =
                slots.iter().map(|&(_, i)| (&pairs[i].word, &pairs[i].image)).collect();
            hinge_with_grad(m, &batch)
        },
    )
}

/// Pretrains each branch alone with a within-modality InfoNCE over the
/// class-labelled background items.
pub fn unimodal_init(model: &Model, pairs: &[BackgroundPair], cfg: &TrainConfig) -> Result<Checkpoint> {
    check_background(pairs)?;
    let groups = group_by_class(pairs);
    optimise(
        model,
        cfg,
        Stage::UnimodalInit,
        |rng| round_robin(groups.clone(), rng),
        |m, slots, rng| unimodal_with_grad(m, pairs, slots, &groups, cfg.loss.n_neg, rng),
    )
}

/// Fine-tunes on word-image pairs with the multimodal objective.
pub fn finetune(
    model: &Model,
    data: &FinetuneData,
    cfg: &TrainConfig,
    use_background_negatives: bool,
) -> Result<Checkpoint> {
    if data.pair_count() == 0 {
        return Err(Error::Contract("fine-tuning needs at least one pair".into()));
    }
    optimise(
        model,
        cfg,
        Stage::Finetune,
        |rng| data.schedule(rng),
        |m, slots, rng| {
            let raw = data.batch(slots, cfg.loss.n_neg, use_background_negatives, rng)?;
            objective_with_grad(m, &raw, &cfg.loss)
        },
    )
}
