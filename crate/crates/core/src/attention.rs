//! Matchmap attention between spoken frames and image cells.
//!
//! All three similarity heads start from the matchmap `M[t, p] = frame_t · cell_p`:
//!
//! * [`SimilarityHead::MaxMatchmap`] scores a pair by the largest matchmap entry.
//! * [`SimilarityHead::ContextCosine`] turns the frame-wise and cell-wise maxima
//!   into softmax attention weights, builds an audio and an image context vector,
//!   and scores the pair by the cosine between them.
//! * [`SimilarityHead::WordToImage`] max-pools the word's frames into a single
//!   embedding and scores it by its best-matching cell.
//!
//! Argmax ties resolve to the lowest index everywhere. The `*_backward`
//! functions accumulate `coeff · ∂score/∂input` into caller-provided buffers
//! laid out like the inputs' row-major data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{dot, norm, Embedding, FrameSequence, Matchmap, PixelGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityHead {
    MaxMatchmap,
    ContextCosine,
    WordToImage,
}

impl SimilarityHead {
    pub fn as_str(self) -> &'static str {
        match self {
            SimilarityHead::MaxMatchmap => "max_matchmap",
            SimilarityHead::ContextCosine => "context_cosine",
            SimilarityHead::WordToImage => "word_to_image",
        }
    }
}

impl std::str::FromStr for SimilarityHead {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max_matchmap" => Ok(SimilarityHead::MaxMatchmap),
            "context_cosine" => Ok(SimilarityHead::ContextCosine),
            "word_to_image" => Ok(SimilarityHead::WordToImage),
            other => Err(Error::Config(format!("unknown similarity head `{other}`"))),
        }
    }
}

/// Output of [`localise`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalisationResult {
    pub peak_frame: usize,
    pub start_frame: usize,
    pub end_frame: usize,
    pub peak_score: f64,
}

/// Output of [`word_to_image_similarity`].
#[derive(Debug, Clone, PartialEq)]
pub struct WordImageScore {
    pub score: f64,
    /// `word · cell_p` for every cell, in grid order.
    pub per_cell: Vec<f64>,
}

fn check_dims(audio_dim: usize, audio: &str, image_dim: usize) -> Result<()> {
    if audio_dim != image_dim {
        return Err(Error::dims(audio, audio_dim, "image", image_dim));
    }
    Ok(())
}

pub fn compute_matchmap(audio: &FrameSequence, image: &PixelGrid) -> Result<Matchmap> {
    check_dims(audio.dim(), audio.source_id(), image.dim())?;
    let mut scores = Vec::with_capacity(audio.len() * image.len());
    for frame in audio.frames() {
        scores.extend(image.cells().map(|cell| dot(frame, cell)));
    }
    Matchmap::from_scores(scores, audio.len(), image.len())
}

/// Largest matchmap entry.
pub fn max_similarity(m: &Matchmap) -> Result<f64> {
    argmax(m.as_slice()).map(|(_, v)| v).ok_or_else(|| Error::Contract("max_similarity of an empty matchmap".into()))
}

/// Cosine between the attention-weighted audio and image context vectors.
pub fn context_similarity(audio: &FrameSequence, image: &PixelGrid) -> Result<f64> {
    Ok(ContextState::forward(audio, image)?.score)
}

pub fn word_to_image_similarity(word: &Embedding, image: &PixelGrid) -> Result<WordImageScore> {
    check_dims(word.dim(), "word", image.dim())?;
    let per_cell: Vec<f64> = image.cells().map(|c| dot(word.as_slice(), c)).collect();
    let (_, score) = argmax(&per_cell).expect("grids have at least one cell");
    Ok(WordImageScore { score, per_cell })
}

/// Peak frame and the contiguous span around it.
///
/// The per-frame score is `s_t = max_p M[t, p]`. The span is the maximal run
/// of frames containing the peak whose score is at least
/// `s* − (1 − tau)·|s*|`, which equals `tau · s*` for a positive peak and
/// keeps the span monotone in `tau` when the peak is negative.
pub fn localise(m: &Matchmap, tau: f64) -> Result<LocalisationResult> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Config(format!("localisation fraction {tau} is not in (0, 1]")));
    }
    if m.is_empty() {
        return Err(Error::Contract("localise on an empty matchmap".into()));
    }
    let frame_scores: Vec<f64> =
        (0..m.frames()).map(|t| argmax(m.row(t)).map(|(_, v)| v).unwrap_or(f64::NEG_INFINITY)).collect();
    let (peak, peak_score) = argmax(&frame_scores).expect("non-empty");
    let threshold = peak_score - (1.0 - tau) * peak_score.abs();
    let mut start = peak;
    while start > 0 && frame_scores[start - 1] >= threshold {
        start -= 1;
    }
    let mut end = peak;
    while end + 1 < frame_scores.len() && frame_scores[end + 1] >= threshold {
        end += 1;
    }
    Ok(LocalisationResult { peak_frame: peak, start_frame: start, end_frame: end, peak_score })
}

/// Element-wise maximum over frames: the embedding of a spoken word.
pub fn max_pool_frames(frames: &FrameSequence) -> Embedding {
    let (pooled, _) = max_pool_with_argmax(frames);
    Embedding::new(pooled).expect("pooled frames are finite and non-empty")
}

fn max_pool_with_argmax(frames: &FrameSequence) -> (Vec<f64>, Vec<usize>) {
    let dim = frames.dim();
    let mut pooled = frames.frame(0).to_vec();
    let mut which = vec![0usize; dim];
    for (t, frame) in frames.frames().enumerate().skip(1) {
        for d in 0..dim {
            if frame[d] > pooled[d] {
                pooled[d] = frame[d];
                which[d] = t;
            }
        }
    }
    (pooled, which)
}

/// Pair score under `head`, with `word` given as per-frame embeddings.
pub fn head_score(head: SimilarityHead, word: &FrameSequence, image: &PixelGrid) -> Result<f64> {
    match head {
        SimilarityHead::MaxMatchmap => max_similarity(&compute_matchmap(word, image)?),
        SimilarityHead::ContextCosine => context_similarity(word, image),
        SimilarityHead::WordToImage => Ok(word_to_image_similarity(&max_pool_frames(word), image)?.score),
    }
}

/// Accumulates `coeff · ∂S/∂word` and `coeff · ∂S/∂image` for `S = head_score(..)`.
/// Returns the score.
pub fn head_backward(
    head: SimilarityHead,
    word: &FrameSequence,
    image: &PixelGrid,
    coeff: f64,
    d_word: &mut [f64],
    d_image: &mut [f64],
) -> Result<f64> {
    check_dims(word.dim(), word.source_id(), image.dim())?;
    debug_assert_eq!(d_word.len(), word.as_slice().len());
    debug_assert_eq!(d_image.len(), image.as_slice().len());
    let dim = word.dim();
    match head {
        SimilarityHead::MaxMatchmap => {
            let m = compute_matchmap(word, image)?;
            let (idx, score) = argmax(m.as_slice()).expect("non-empty");
            let (t, p) = (idx / m.cells(), idx % m.cells());
            axpy(coeff, image.cell(p), &mut d_word[t * dim..(t + 1) * dim]);
            axpy(coeff, word.frame(t), &mut d_image[p * dim..(p + 1) * dim]);
            Ok(score)
        }
        SimilarityHead::WordToImage => {
            let (pooled, which) = max_pool_with_argmax(word);
            let per_cell: Vec<f64> = image.cells().map(|c| dot(&pooled, c)).collect();
            let (p, score) = argmax(&per_cell).expect("non-empty");
            let cell = image.cell(p);
            for d in 0..dim {
                d_word[which[d] * dim + d] += coeff * cell[d];
            }
            axpy(coeff, &pooled, &mut d_image[p * dim..(p + 1) * dim]);
            Ok(score)
        }
        SimilarityHead::ContextCosine => {
            let state = ContextState::forward(word, image)?;
            state.backward(word, image, coeff, d_word, d_image);
            Ok(state.score)
        }
    }
}

/// [`head_score`] for training: a zero-norm context vector scores 0
/// instead of failing, so one dead embedding does not abort a run.
pub(crate) fn train_score(head: SimilarityHead, word: &FrameSequence, image: &PixelGrid) -> Result<f64> {
    match head_score(head, word, image) {
        Err(Error::Degenerate(_)) => Ok(0.0),
        r => r,
    }
}

/// [`head_backward`] with the same convention as [`train_score`]; a
/// degenerate pair contributes no gradient.
pub(crate) fn train_backward(
    head: SimilarityHead,
    word: &FrameSequence,
    image: &PixelGrid,
    coeff: f64,
    d_word: &mut [f64],
    d_image: &mut [f64],
) -> Result<f64> {
    match head_backward(head, word, image, coeff, d_word, d_image) {
        Err(Error::Degenerate(_)) => Ok(0.0),
        r => r,
    }
}

/// Dot product of the max-pooled embeddings of two spoken words.
pub fn word_similarity(a: &FrameSequence, b: &FrameSequence) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::dims(a.source_id(), a.dim(), b.source_id(), b.dim()));
    }
    let (pa, _) = max_pool_with_argmax(a);
    let (pb, _) = max_pool_with_argmax(b);
    Ok(dot(&pa, &pb))
}

pub fn word_similarity_backward(
    a: &FrameSequence,
    b: &FrameSequence,
    coeff: f64,
    d_a: &mut [f64],
    d_b: &mut [f64],
) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::dims(a.source_id(), a.dim(), b.source_id(), b.dim()));
    }
    let dim = a.dim();
    let (pa, wa) = max_pool_with_argmax(a);
    let (pb, wb) = max_pool_with_argmax(b);
    for d in 0..dim {
        d_a[wa[d] * dim + d] += coeff * pb[d];
        d_b[wb[d] * dim + d] += coeff * pa[d];
    }
    Ok(dot(&pa, &pb))
}

struct ContextState {
    /// Best cell for each frame, and its softmax weight.
    frame_argmax: Vec<usize>,
    alpha: Vec<f64>,
    /// Best frame for each cell, and its softmax weight.
    cell_argmax: Vec<usize>,
    beta: Vec<f64>,
    audio_ctx: Vec<f64>,
    image_ctx: Vec<f64>,
    score: f64,
}

impl ContextState {
    fn forward(audio: &FrameSequence, image: &PixelGrid) -> Result<Self> {
        let m = compute_matchmap(audio, image)?;
        let (frames, cells, dim) = (m.frames(), m.cells(), audio.dim());

        let mut frame_max = Vec::with_capacity(frames);
        let mut frame_argmax = Vec::with_capacity(frames);
        for t in 0..frames {
            let (p, v) = argmax(m.row(t)).expect("non-empty");
            frame_argmax.push(p);
            frame_max.push(v);
        }
        let mut cell_max = vec![f64::NEG_INFINITY; cells];
        let mut cell_argmax = vec![0usize; cells];
        for t in 0..frames {
            for p in 0..cells {
                if m.get(t, p) > cell_max[p] {
                    cell_max[p] = m.get(t, p);
                    cell_argmax[p] = t;
                }
            }
        }
        let alpha = softmax(&frame_max);
        let beta = softmax(&cell_max);

        let mut audio_ctx = vec![0.0; dim];
        for (a, frame) in alpha.iter().zip(audio.frames()) {
            axpy(*a, frame, &mut audio_ctx);
        }
        let mut image_ctx = vec![0.0; dim];
        for (b, cell) in beta.iter().zip(image.cells()) {
            axpy(*b, cell, &mut image_ctx);
        }
        let (na, nv) = (norm(&audio_ctx), norm(&image_ctx));
        if na == 0.0 || nv == 0.0 {
            return Err(Error::Degenerate(format!("zero-norm context vector for {}", audio.source_id())));
        }
        let score = dot(&audio_ctx, &image_ctx) / (na * nv);
        Ok(ContextState { frame_argmax, alpha, cell_argmax, beta, audio_ctx, image_ctx, score })
    }

    fn backward(&self, audio: &FrameSequence, image: &PixelGrid, coeff: f64, d_audio: &mut [f64], d_image: &mut [f64]) {
        let dim = audio.dim();
        let (na, nv) = (norm(&self.audio_ctx), norm(&self.image_ctx));
        let s = self.score;
        let grad_a: Vec<f64> =
            self.audio_ctx.iter().zip(&self.image_ctx).map(|(a, v)| v / (na * nv) - s * a / (na * na)).collect();
        let grad_v: Vec<f64> =
            self.audio_ctx.iter().zip(&self.image_ctx).map(|(a, v)| a / (na * nv) - s * v / (nv * nv)).collect();

        // Audio side: direct path through the context vector, then through the
        // softmax weights into the frame-wise maxima.
        let mean_a = dot(&self.audio_ctx, &grad_a);
        for t in 0..audio.len() {
            let frame = audio.frame(t);
            let alpha = self.alpha[t];
            axpy(coeff * alpha, &grad_a, &mut d_audio[t * dim..(t + 1) * dim]);
            let d_max = alpha * (dot(frame, &grad_a) - mean_a);
            let p = self.frame_argmax[t];
            axpy(coeff * d_max, image.cell(p), &mut d_audio[t * dim..(t + 1) * dim]);
            axpy(coeff * d_max, frame, &mut d_image[p * dim..(p + 1) * dim]);
        }

        let mean_v = dot(&self.image_ctx, &grad_v);
        for p in 0..image.len() {
            let cell = image.cell(p);
            let beta = self.beta[p];
            axpy(coeff * beta, &grad_v, &mut d_image[p * dim..(p + 1) * dim]);
            let d_max = beta * (dot(cell, &grad_v) - mean_v);
            let t = self.cell_argmax[p];
            axpy(coeff * d_max, audio.frame(t), &mut d_image[p * dim..(p + 1) * dim]);
            axpy(coeff * d_max, cell, &mut d_audio[t * dim..(t + 1) * dim]);
        }
    }
}

/// First index of the maximum; `None` for an empty slice.
pub(crate) fn argmax(values: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best
}

pub(crate) fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
