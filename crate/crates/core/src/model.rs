//! Encoders and scorers.
//!
//! [`Model`] has two branches of identical shape, one for spoken frames and
//! one for image cells: `z = W2 · tanh(W1 · x + b1) + b2`, applied to every
//! row independently. Word embeddings are obtained by max-pooling frame
//! outputs (see [`crate::attention::max_pool_frames`]).
//!
//! Evaluation code is written against two traits. [`Embedder`] maps raw
//! features to embeddings and fixes a similarity head; every embedder is a
//! [`Scorer`]. [`ExchangeableScorer`] is a scorer with no embedding at all,
//! used to calibrate the evaluation harness.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attention::{self, SimilarityHead};
use crate::data::Prototypes;
use crate::error::{Error, Result};
use crate::rng::RandomSource;
use crate::types::{ClassId, FrameSequence, Matchmap, PixelGrid};

pub trait Embedder: Sync {
    fn embed_frames(&self, frames: &FrameSequence) -> Result<FrameSequence>;
    fn embed_grid(&self, grid: &PixelGrid) -> Result<PixelGrid>;
    fn head(&self) -> SimilarityHead;
}

/// Anything that can score a spoken word against an image.
pub trait Scorer: Sync {
    fn word_image_score(&self, word: &FrameSequence, image: &PixelGrid) -> Result<f64>;
}

impl<E: Embedder> Scorer for E {
    fn word_image_score(&self, word: &FrameSequence, image: &PixelGrid) -> Result<f64> {
        attention::head_score(self.head(), &self.embed_frames(word)?, &self.embed_grid(image)?)
    }
}

/// Scores through the word-to-image head whatever head the wrapped model
/// trains with. Classification and ME trials are defined on this head.
#[derive(Debug, Clone, Copy)]
pub struct WordToImage<'a, E: ?Sized>(pub &'a E);

impl<E: Embedder + ?Sized> Scorer for WordToImage<'_, E> {
    fn word_image_score(&self, word: &FrameSequence, image: &PixelGrid) -> Result<f64> {
        attention::head_score(SimilarityHead::WordToImage, &self.0.embed_frames(word)?, &self.0.embed_grid(image)?)
    }
}

/// Utterance-level score and the matchmap it came from.
///
/// The context-vector head keeps its cosine score; the other heads score an
/// utterance by its largest matchmap entry.
pub fn utterance_image_score<E: Embedder + ?Sized>(
    model: &E,
    utterance: &FrameSequence,
    image: &PixelGrid,
) -> Result<(f64, Matchmap)> {
    let frames = model.embed_frames(utterance)?;
    let cells = model.embed_grid(image)?;
    let m = attention::compute_matchmap(&frames, &cells)?;
    let score = match model.head() {
        SimilarityHead::ContextCosine => attention::context_similarity(&frames, &cells)?,
        SimilarityHead::MaxMatchmap | SimilarityHead::WordToImage => attention::max_similarity(&m)?,
    };
    Ok((score, m))
}

/// Nonlinearity applied after the second affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    Tanh,
    #[default]
    Relu,
    Sigmoid,
}

impl OutputActivation {
    fn apply(self, v: f64) -> f64 {
        match self {
            OutputActivation::Identity => v,
            OutputActivation::Tanh => v.tanh(),
            OutputActivation::Relu => v.max(0.0),
            OutputActivation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
        }
    }

    /// Derivative expressed through the activation's output.
    fn slope(self, out: f64) -> f64 {
        match self {
            OutputActivation::Identity => 1.0,
            OutputActivation::Tanh => 1.0 - out * out,
            OutputActivation::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            OutputActivation::Sigmoid => out * (1.0 - out),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    #[serde(default)]
    pub output: OutputActivation,
}

impl ModelDims {
    pub fn new(input_dim: usize, hidden_dim: usize, embed_dim: usize) -> Self {
        ModelDims { input_dim, hidden_dim, embed_dim, output: OutputActivation::default() }
    }

    pub fn with_output(mut self, output: OutputActivation) -> Self {
        self.output = output;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.embed_dim == 0 {
            return Err(Error::Config(format!("model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    fn branch_len(&self) -> usize {
        let (f, h, d) = (self.input_dim, self.hidden_dim, self.embed_dim);
        h * f + h + d * h + d
    }

    pub fn param_count(&self) -> usize {
        2 * self.branch_len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Audio,
    Vision,
}

/// Two-branch encoder with a flat parameter vector.
///
/// Parameter layout, per branch and audio first: `W1` (hidden × input,
/// row-major), `b1`, `W2` (embed × hidden), `b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    dims: ModelDims,
    head: SimilarityHead,
    params: Vec<f64>,
}

/// Forward activations kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct Activations {
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

/// Scaled-uniform (Glorot) weights and zero biases.
pub fn init_model(dims: ModelDims, head: SimilarityHead, rng: &mut RandomSource) -> Result<Model> {
    dims.validate()?;
    let (f, h, d) = (dims.input_dim, dims.hidden_dim, dims.embed_dim);
    let mut params = Vec::with_capacity(dims.param_count());
    for _ in 0..2 {
        let a1 = (6.0 / (f + h) as f64).sqrt();
        params.extend((0..h * f).map(|_| rng.random_range(-a1..a1)));
        params.extend(std::iter::repeat_n(0.0, h));
        let a2 = (6.0 / (h + d) as f64).sqrt();
        params.extend((0..d * h).map(|_| rng.random_range(-a2..a2)));
        params.extend(std::iter::repeat_n(0.0, d));
    }
    Ok(Model { dims, head, params })
}

impl Model {
    pub fn from_params(dims: ModelDims, head: SimilarityHead, params: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        if params.len() != dims.param_count() {
            return Err(Error::Format {
                field: "payload",
                detail: format!("{} parameters, model needs {}", params.len(), dims.param_count()),
            });
        }
        crate::types::check_finite(&params, "model parameters")?;
        Ok(Model { dims, head, params })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn head_kind(&self) -> SimilarityHead {
        self.head
    }

    /// Rounds every parameter through `f32`, the checkpoint precision.
    pub fn round_to_f32(&mut self) {
        for p in &mut self.params {
            *p = *p as f32 as f64;
        }
    }

    pub fn set_head(&mut self, head: SimilarityHead) {
        self.head = head;
    }

    pub fn with_head(mut self, head: SimilarityHead) -> Self {
        self.head = head;
        self
    }

    /// SHA-256 over the parameters as little-endian `f64`.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for p in &self.params {
            hasher.update(p.to_le_bytes());
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn offset(&self, branch: Branch) -> usize {
        match branch {
            Branch::Audio => 0,
            Branch::Vision => self.dims.branch_len(),
        }
    }

    /// Encodes `rows` input rows laid out row-major.
    pub(crate) fn forward(&self, branch: Branch, input: &[f64]) -> Result<Activations> {
        let ModelDims { input_dim: f, hidden_dim: h, embed_dim: d, output: act } = self.dims;
        if !input.len().is_multiple_of(f) {
            return Err(Error::dims("input features", input.len() % f, "model input", f));
        }
        let p = &self.params[self.offset(branch)..];
        let (w1, rest) = p.split_at(h * f);
        let (b1, rest) = rest.split_at(h);
        let (w2, rest) = rest.split_at(d * h);
        let b2 = &rest[..d];
        let rows = input.len() / f;
        let mut hidden = Vec::with_capacity(rows * h);
        let mut output = Vec::with_capacity(rows * d);
        for x in input.chunks_exact(f) {
            let start = hidden.len();
            for j in 0..h {
                let a: f64 = b1[j] + crate::types::dot(&w1[j * f..(j + 1) * f], x);
                hidden.push(a.tanh());
            }
            let hid = &hidden[start..];
            for k in 0..d {
                output.push(act.apply(b2[k] + crate::types::dot(&w2[k * h..(k + 1) * h], hid)));
            }
        }
        Ok(Activations { hidden, output })
    }

    /// Accumulates parameter gradients given `∂loss/∂output`.
    pub(crate) fn backward(
        &self,
        branch: Branch,
        input: &[f64],
        acts: &Activations,
        d_output: &[f64],
        grad: &mut [f64],
    ) {
        let ModelDims { input_dim: f, hidden_dim: h, embed_dim: d, output: act } = self.dims;
        let off = self.offset(branch);
        let w2 = &self.params[off + h * f + h..off + h * f + h + d * h];
        let (gw1, rest) = grad[off..off + self.dims.branch_len()].split_at_mut(h * f);
        let (gb1, rest) = rest.split_at_mut(h);
        let (gw2, gb2) = rest.split_at_mut(d * h);
        let mut d_hidden = vec![0.0; h];
        for (((x, hid), out), dz) in input
            .chunks_exact(f)
            .zip(acts.hidden.chunks_exact(h))
            .zip(acts.output.chunks_exact(d))
            .zip(d_output.chunks_exact(d))
        {
            d_hidden.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..d {
                let g = dz[k] * act.slope(out[k]);
                if g == 0.0 {
                    continue;
                }
                gb2[k] += g;
                for j in 0..h {
                    gw2[k * h + j] += g * hid[j];
                    d_hidden[j] += g * w2[k * h + j];
                }
            }
            for j in 0..h {
                let da = d_hidden[j] * (1.0 - hid[j] * hid[j]);
                if da == 0.0 {
                    continue;
                }
                gb1[j] += da;
                for i in 0..f {
                    gw1[j * f + i] += da * x[i];
                }
            }
        }
    }

    fn check_input(&self, dim: usize, what: &str) -> Result<()> {
        if dim != self.dims.input_dim {
            return Err(Error::dims(what, dim, "model input", self.dims.input_dim));
        }
        Ok(())
    }
}

impl Embedder for Model {
    fn embed_frames(&self, frames: &FrameSequence) -> Result<FrameSequence> {
        self.check_input(frames.dim(), frames.source_id())?;
        let acts = self.forward(Branch::Audio, frames.as_slice())?;
        FrameSequence::with_duration(acts.output, self.dims.embed_dim, frames.frame_duration(), frames.source_id())
    }

    fn embed_grid(&self, grid: &PixelGrid) -> Result<PixelGrid> {
        self.check_input(grid.dim(), "image")?;
        let acts = self.forward(Branch::Vision, grid.as_slice())?;
        PixelGrid::new(acts.output, self.dims.embed_dim, grid.height(), grid.width())
    }

    fn head(&self) -> SimilarityHead {
        self.head
    }
}

/// Projects features onto the generator's class prototypes: embedding
/// component `c` is `x · proto_c / |proto_c|²`, so a noise-free item of
/// class `c` embeds to the one-hot vector `e_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeOracle {
    audio: Vec<Vec<f64>>,
    visual: Vec<Vec<f64>>,
    sign: f64,
    head: SimilarityHead,
}

impl PrototypeOracle {
    /// Oracle over the given classes (embedding dimension = `classes.len()`).
    pub fn new(prototypes: &Prototypes, classes: &[ClassId]) -> Result<Self> {
        let pick = |rows: &[Vec<f64>]| -> Result<Vec<Vec<f64>>> {
            classes
                .iter()
                .map(|c| {
                    let row =
                        rows.get(c.0 as usize).ok_or_else(|| Error::Config(format!("no prototype for class {c}")))?;
                    let n2: f64 = row.iter().map(|v| v * v).sum();
                    Ok(row.iter().map(|v| v / n2).collect())
                })
                .collect()
        };
        if classes.is_empty() {
            return Err(Error::Config("oracle needs at least one class".into()));
        }
        Ok(PrototypeOracle {
            audio: pick(&prototypes.audio)?,
            visual: pick(&prototypes.visual)?,
            sign: 1.0,
            head: SimilarityHead::WordToImage,
        })
    }

    /// Every word-image score negated.
    pub fn negated(mut self) -> Self {
        self.sign = -self.sign;
        self
    }

    pub fn with_head(mut self, head: SimilarityHead) -> Self {
        self.head = head;
        self
    }

    fn project(rows: &[Vec<f64>], data: &[f64], dim: usize, sign: f64) -> Result<Vec<f64>> {
        let expected = rows.first().map_or(0, Vec::len);
        if dim != expected {
            return Err(Error::dims("input features", dim, "prototypes", expected));
        }
        Ok(data.chunks_exact(dim).flat_map(|x| rows.iter().map(move |r| sign * crate::types::dot(r, x))).collect())
    }
}

impl Embedder for PrototypeOracle {
    fn embed_frames(&self, frames: &FrameSequence) -> Result<FrameSequence> {
        let data = Self::project(&self.audio, frames.as_slice(), frames.dim(), self.sign)?;
        FrameSequence::with_duration(data, self.audio.len(), frames.frame_duration(), frames.source_id())
    }

    fn embed_grid(&self, grid: &PixelGrid) -> Result<PixelGrid> {
        let data = Self::project(&self.visual, grid.as_slice(), grid.dim(), 1.0)?;
        PixelGrid::new(data, self.visual.len(), grid.height(), grid.width())
    }

    fn head(&self) -> SimilarityHead {
        self.head
    }
}

/// Scores every (word, image) pair with an independent uniform draw keyed on
/// the pair's content, so scores are exchangeable across classes but
/// reproducible for a seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExchangeableScorer {
    seed: u64,
}

impl ExchangeableScorer {
    pub fn new(seed: u64) -> Self {
        ExchangeableScorer { seed }
    }
}

impl Scorer for ExchangeableScorer {
    fn word_image_score(&self, word: &FrameSequence, image: &PixelGrid) -> Result<f64> {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update((word.as_slice().len() as u64).to_le_bytes());
        for v in word.as_slice().iter().chain(image.as_slice()) {
            hasher.update(v.to_le_bytes());
        }
        let digest = hasher.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        Ok((u64::from_le_bytes(bytes) >> 11) as f64 / (1u64 << 53) as f64)
    }
}
