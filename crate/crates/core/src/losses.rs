//! Training objectives with analytic gradients.
//!
//! * [`triplet_loss`] on squared Euclidean distances.
//! * [`infonce_pair`], the two-sided InfoNCE term: one softmax over the
//!   positive and negatives for the second item, one for the first item.
//! * [`multimodal_objective`], which applies `infonce_pair` to word-image
//!   scores for every language and, optionally, to word-word scores between
//!   languages.
//! * [`hinge_retrieval_loss`], the margin-1 ranking loss over a square score matrix.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::attention::{self, SimilarityHead};
use crate::error::{Error, Result};
use crate::types::{Embedding, FrameSequence, Language, PixelGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Triplet margin.
    pub margin: f64,
    /// Negatives sampled per anchor and side.
    pub n_neg: usize,
    pub cross_lingual: bool,
    /// Ordered language pairs `(first, second)` for cross-lingual terms.
    pub language_pairs: Vec<(Language, Language)>,
    /// Adds a word-word term between two same-class words of each language.
    pub within_language: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { margin: 1.0, n_neg: 4, cross_lingual: false, language_pairs: Vec::new(), within_language: false }
    }
}

impl LossConfig {
    pub fn cross_lingual(pairs: Vec<(Language, Language)>) -> Self {
        LossConfig { cross_lingual: true, language_pairs: pairs, ..LossConfig::default() }
    }

    /// Every unordered pair of `languages`: the first language against each
    /// other one, then later languages against earlier ones. For
    /// `[english, dutch, french]` this is english–dutch, english–french,
    /// french–dutch.
    pub fn all_pairs(languages: &[Language]) -> Vec<(Language, Language)> {
        let mut pairs = Vec::new();
        if let Some((first, rest)) = languages.split_first() {
            pairs.extend(rest.iter().map(|l| (first.clone(), l.clone())));
            for (j, later) in rest.iter().enumerate() {
                pairs.extend(rest[..j].iter().map(|earlier| (later.clone(), earlier.clone())));
            }
        }
        pairs
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(Error::Config(format!("margin {} must be >= 0", self.margin)));
        }
        if self.cross_lingual == self.language_pairs.is_empty() {
            return Err(Error::Config(
                "language pairs must be given exactly when cross-lingual terms are enabled".into(),
            ));
        }
        Ok(())
    }
}

pub fn squared_distance(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::dims("first embedding", a.dim(), "second embedding", b.dim()));
    }
    Ok(a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum())
}

pub fn triplet_loss(x: &Embedding, pair: &Embedding, neg: &Embedding, margin: f64) -> Result<f64> {
    Ok(triplet_loss_grad(x, pair, neg, margin)?.loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletGrad {
    pub loss: f64,
    pub d_anchor: Vec<f64>,
    pub d_pair: Vec<f64>,
    pub d_neg: Vec<f64>,
}

pub fn triplet_loss_grad(x: &Embedding, pair: &Embedding, neg: &Embedding, margin: f64) -> Result<TripletGrad> {
    let d_pos = squared_distance(x, pair)?;
    let d_neg = squared_distance(x, neg)?;
    let raw = margin + d_pos - d_neg;
    let dim = x.dim();
    if raw <= 0.0 {
        return Ok(TripletGrad { loss: 0.0, d_anchor: vec![0.0; dim], d_pair: vec![0.0; dim], d_neg: vec![0.0; dim] });
    }
    let (x, p, n) = (x.as_slice(), pair.as_slice(), neg.as_slice());
    Ok(TripletGrad {
        loss: raw,
        d_anchor: (0..dim).map(|d| 2.0 * (n[d] - p[d])).collect(),
        d_pair: (0..dim).map(|d| -2.0 * (x[d] - p[d])).collect(),
        d_neg: (0..dim).map(|d| 2.0 * (x[d] - n[d])).collect(),
    })
}

/// `−[log softmax_pos(s_pos, s_neg_a) + log softmax_pos(s_pos, s_neg_b)]`.
pub fn infonce_pair(s_pos: f64, s_neg_a: &[f64], s_neg_b: &[f64]) -> Result<f64> {
    Ok(infonce_pair_grad(s_pos, s_neg_a, s_neg_b)?.loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfoNceGrad {
    pub loss: f64,
    pub d_pos: f64,
    pub d_neg_a: Vec<f64>,
    pub d_neg_b: Vec<f64>,
}

pub fn infonce_pair_grad(s_pos: f64, s_neg_a: &[f64], s_neg_b: &[f64]) -> Result<InfoNceGrad> {
    if !s_pos.is_finite() || s_neg_a.iter().chain(s_neg_b).any(|s| !s.is_finite()) {
        return Err(Error::Numeric("InfoNCE scores must be finite".into()));
    }
    let (loss_a, pos_a, d_neg_a) = one_sided(s_pos, s_neg_a);
    let (loss_b, pos_b, d_neg_b) = one_sided(s_pos, s_neg_b);
    Ok(InfoNceGrad { loss: loss_a + loss_b, d_pos: (pos_a - 1.0) + (pos_b - 1.0), d_neg_a, d_neg_b })
}

/// Loss `lse(pos, negs) − pos`, the positive's softmax weight, and the negatives' weights.
fn one_sided(s_pos: f64, negs: &[f64]) -> (f64, f64, Vec<f64>) {
    if negs.is_empty() {
        return (0.0, 1.0, Vec::new());
    }
    let max = negs.iter().copied().fold(s_pos, f64::max);
    let pos_exp = (s_pos - max).exp();
    let neg_exp: Vec<f64> = negs.iter().map(|s| (s - max).exp()).collect();
    let total = pos_exp + neg_exp.iter().sum::<f64>();
    let loss = (max + total.ln()) - s_pos;
    (loss.max(0.0), pos_exp / total, neg_exp.into_iter().map(|e| e / total).collect())
}

/// `Σ_i Σ_{j≠i} [max(0, 1 + S_ij − S_ii) + max(0, 1 + S_ji − S_ii)] / B`.
pub fn hinge_retrieval_loss(sim: &[Vec<f64>]) -> Result<f64> {
    Ok(hinge_retrieval_loss_grad(sim)?.0)
}

/// Loss and `∂loss/∂S` with the same shape as `sim`.
pub fn hinge_retrieval_loss_grad(sim: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
    const MARGIN: f64 = 1.0;
    let b = sim.len();
    if let Some(row) = sim.iter().find(|r| r.len() != b) {
        return Err(Error::dims("similarity rows", b, "similarity columns", row.len()));
    }
    let mut grad = vec![vec![0.0; b]; b];
    if b == 0 {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / b as f64;
    let mut loss = 0.0;
    for i in 0..b {
        for j in (0..b).filter(|&j| j != i) {
            let image_side = MARGIN + sim[i][j] - sim[i][i];
            if image_side > 0.0 {
                loss += image_side;
                grad[i][j] += scale;
                grad[i][i] -= scale;
            }
            let word_side = MARGIN + sim[j][i] - sim[i][i];
            if word_side > 0.0 {
                loss += word_side;
                grad[j][i] += scale;
                grad[i][i] -= scale;
            }
        }
    }
    Ok((loss * scale, grad))
}

/// An encoded spoken word in a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchWord {
    pub frames: FrameSequence,
    pub language: Language,
}

/// One anchor: an image with its same-class words and the sampled negatives.
/// All fields index into [`EncodedBatch::words`] / [`EncodedBatch::images`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Anchor {
    pub image: usize,
    /// One same-class word per language.
    pub words: BTreeMap<Language, usize>,
    /// A second same-class word per language, for within-language terms.
    pub alt_words: BTreeMap<Language, usize>,
    pub neg_images: Vec<usize>,
    /// Different-class words per language.
    pub neg_words: BTreeMap<Language, Vec<usize>>,
}

/// Encoder outputs for everything a batch refers to.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EncodedBatch {
    pub words: Vec<BatchWord>,
    pub images: Vec<PixelGrid>,
    pub anchors: Vec<Anchor>,
}

/// Loss with gradients laid out like the batch's word and image data.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveOutput {
    pub loss: f64,
    pub word_grads: Vec<Vec<f64>>,
    pub image_grads: Vec<Vec<f64>>,
    /// InfoNCE terms evaluated, summed over anchors.
    pub terms: usize,
}

impl EncodedBatch {
    fn check(&self, cfg: &LossConfig) -> Result<()> {
        cfg.validate()?;
        if self.anchors.is_empty() {
            return Err(Error::Contract("batch has no anchors".into()));
        }
        let word_ok = |i: &usize| *i < self.words.len();
        for a in &self.anchors {
            let ok = a.image < self.images.len()
                && a.neg_images.iter().all(|i| *i < self.images.len())
                && a.words.values().all(word_ok)
                && a.alt_words.values().all(word_ok)
                && a.neg_words.values().flatten().all(word_ok);
            if !ok {
                return Err(Error::Contract("anchor refers outside the batch".into()));
            }
            if a.words.is_empty() {
                return Err(Error::Contract("anchor has no words".into()));
            }
        }
        if cfg.cross_lingual {
            let present: BTreeSet<&Language> = self.words.iter().map(|w| &w.language).collect();
            for (l1, l2) in &cfg.language_pairs {
                for lang in [l1, l2] {
                    if !present.contains(lang) {
                        return Err(Error::Config(format!(
                            "cross-lingual pair needs language `{lang}`, absent from the batch"
                        )));
                    }
                    if self.anchors.iter().any(|a| !a.words.contains_key(lang)) {
                        return Err(Error::Config(format!(
                            "an anchor has no `{lang}` word for a configured cross-lingual pair"
                        )));
                    }
                }
            }
        }
        if cfg.within_language && self.anchors.iter().any(|a| a.words.keys().any(|l| !a.alt_words.contains_key(l))) {
            return Err(Error::Config("within-language terms need a second same-class word per language".into()));
        }
        Ok(())
    }
}

/// Mean over anchors of the summed InfoNCE terms.
///
/// Word-image scores come from `head`; word-word scores are dot products of
/// max-pooled word embeddings.
pub fn multimodal_objective(batch: &EncodedBatch, head: SimilarityHead, cfg: &LossConfig) -> Result<ObjectiveOutput> {
    batch.check(cfg)?;
    let mut acc = GradAccumulator::new(batch);
    let weight = 1.0 / batch.anchors.len() as f64;
    let mut loss = 0.0;
    let mut terms = 0;
    let empty = Vec::new();

    for anchor in &batch.anchors {
        for (lang, &word) in &anchor.words {
            let neg_words = anchor.neg_words.get(lang).unwrap_or(&empty);
            let s_pos = acc.head_score(head, word, anchor.image)?;
            let neg_a =
                anchor.neg_images.iter().map(|&img| acc.head_score(head, word, img)).collect::<Result<Vec<_>>>()?;
            let neg_b = neg_words.iter().map(|&w| acc.head_score(head, w, anchor.image)).collect::<Result<Vec<_>>>()?;
            let g = infonce_pair_grad(s_pos, &neg_a, &neg_b)?;
            loss += weight * g.loss;
            terms += 1;
            acc.head_backward(head, word, anchor.image, weight * g.d_pos)?;
            for (&img, d) in anchor.neg_images.iter().zip(&g.d_neg_a) {
                acc.head_backward(head, word, img, weight * d)?;
            }
            for (&w, d) in neg_words.iter().zip(&g.d_neg_b) {
                acc.head_backward(head, w, anchor.image, weight * d)?;
            }
        }

        let mut word_terms: Vec<(usize, usize, &[usize], &[usize])> = Vec::new();
        if cfg.cross_lingual {
            for (l1, l2) in &cfg.language_pairs {
                word_terms.push((
                    anchor.words[l1],
                    anchor.words[l2],
                    anchor.neg_words.get(l2).unwrap_or(&empty),
                    anchor.neg_words.get(l1).unwrap_or(&empty),
                ));
            }
        }
        if cfg.within_language {
            for (lang, &word) in &anchor.words {
                let negs = anchor.neg_words.get(lang).unwrap_or(&empty);
                word_terms.push((word, anchor.alt_words[lang], negs, negs));
            }
        }
        for (first, second, neg_second, neg_first) in word_terms {
            let s_pos = acc.word_score(first, second)?;
            let neg_a = neg_second.iter().map(|&w| acc.word_score(first, w)).collect::<Result<Vec<_>>>()?;
            let neg_b = neg_first.iter().map(|&w| acc.word_score(w, second)).collect::<Result<Vec<_>>>()?;
            let g = infonce_pair_grad(s_pos, &neg_a, &neg_b)?;
            loss += weight * g.loss;
            terms += 1;
            acc.word_backward(first, second, weight * g.d_pos)?;
            for (&w, d) in neg_second.iter().zip(&g.d_neg_a) {
                acc.word_backward(first, w, weight * d)?;
            }
            for (&w, d) in neg_first.iter().zip(&g.d_neg_b) {
                acc.word_backward(w, second, weight * d)?;
            }
        }
    }

    Ok(ObjectiveOutput { loss, word_grads: acc.word_grads, image_grads: acc.image_grads, terms })
}

struct GradAccumulator<'a> {
    batch: &'a EncodedBatch,
    word_grads: Vec<Vec<f64>>,
    image_grads: Vec<Vec<f64>>,
}

impl<'a> GradAccumulator<'a> {
    fn new(batch: &'a EncodedBatch) -> Self {
        GradAccumulator {
            batch,
            word_grads: batch.words.iter().map(|w| vec![0.0; w.frames.as_slice().len()]).collect(),
            image_grads: batch.images.iter().map(|g| vec![0.0; g.as_slice().len()]).collect(),
        }
    }

    fn head_score(&self, head: SimilarityHead, word: usize, image: usize) -> Result<f64> {
        attention::train_score(head, &self.batch.words[word].frames, &self.batch.images[image])
    }

    fn head_backward(&mut self, head: SimilarityHead, word: usize, image: usize, coeff: f64) -> Result<()> {
        attention::train_backward(
            head,
            &self.batch.words[word].frames,
            &self.batch.images[image],
            coeff,
            &mut self.word_grads[word],
            &mut self.image_grads[image],
        )?;
        Ok(())
    }

    fn word_score(&self, a: usize, b: usize) -> Result<f64> {
        attention::word_similarity(&self.batch.words[a].frames, &self.batch.words[b].frames)
    }

    fn word_backward(&mut self, a: usize, b: usize, coeff: f64) -> Result<()> {
        let (wa, wb) = (&self.batch.words[a].frames, &self.batch.words[b].frames);
        let mut da = vec![0.0; wa.as_slice().len()];
        let mut db = vec![0.0; wb.as_slice().len()];
        attention::word_similarity_backward(wa, wb, coeff, &mut da, &mut db)?;
        add_into(&mut self.word_grads[a], &da);
        add_into(&mut self.word_grads[b], &db);
        Ok(())
    }
}

fn add_into(acc: &mut [f64], delta: &[f64]) {
    for (a, d) in acc.iter_mut().zip(delta) {
        *a += d;
    }
}
