//! Few-shot pair mining.
//!
//! Spoken words are found in unlabelled utterances by query-by-example: each
//! support word slides over an utterance and the best window is kept. Images
//! are ranked by cosine similarity to the support images. The top `n` words
//! and images of a class are then paired rank by rank.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{dot, norm, AlignmentSpan, ClassId, Embedding, FrameSequence, PixelGrid, SupportSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMatch {
    pub utterance_id: String,
    pub start_frame: usize,
    /// Inclusive.
    pub end_frame: usize,
    /// Mean per-frame cosine over the window.
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_class: Option<ClassId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMatch {
    pub image_id: String,
    pub score: f64,
    pub predicted_class: ClassId,
}

/// A class that had fewer candidates than requested.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortage {
    pub class: ClassId,
    pub requested: usize,
    pub available: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mined<T> {
    pub per_class: BTreeMap<ClassId, Vec<T>>,
    pub shortages: Vec<Shortage>,
}

fn unit_rows(seq: &FrameSequence) -> Vec<Vec<f64>> {
    seq.frames()
        .map(|f| {
            let n = norm(f);
            if n > 0.0 {
                f.iter().map(|v| v / n).collect()
            } else {
                vec![0.0; f.len()]
            }
        })
        .collect()
}

/// Best window of `utterance` for `query`, windows having the query's length.
/// Ties go to the earliest start.
pub fn qbe_match(query: &FrameSequence, utterance: &FrameSequence) -> Result<SegmentMatch> {
    if query.dim() != utterance.dim() {
        return Err(Error::dims(query.source_id(), query.dim(), utterance.source_id(), utterance.dim()));
    }
    let (tq, t) = (query.len(), utterance.len());
    if tq > t {
        return Err(Error::QueryTooLong { query: tq, utterance: t });
    }
    let q = unit_rows(query);
    let u = unit_rows(utterance);
    let mut best = (0, f64::NEG_INFINITY);
    for start in 0..=t - tq {
        let score = q.iter().zip(&u[start..]).map(|(a, b)| dot(a, b)).sum::<f64>() / tq as f64;
        if score > best.1 {
            best = (start, score);
        }
    }
    Ok(SegmentMatch {
        utterance_id: utterance.source_id().to_string(),
        start_frame: best.0,
        end_frame: best.0 + tq - 1,
        score: best.1,
        predicted_class: None,
    })
}

fn rank_segments(a: &SegmentMatch, b: &SegmentMatch) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.utterance_id.cmp(&b.utterance_id))
        .then_with(|| a.start_frame.cmp(&b.start_frame))
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Contract("number of pairs to mine must be at least 1".into()));
    }
    Ok(())
}

/// For each class, the `n` best utterances by the maximum over the class's
/// support words of the `qbe_match` score. An utterance contributes at most one
/// segment per class. Support words longer than an utterance skip it.
pub fn mine_audio_pairs(support: &SupportSet, corpus: &[FrameSequence], n: usize) -> Result<Mined<SegmentMatch>> {
    check_n(n)?;
    let mut per_class = BTreeMap::new();
    let mut shortages = Vec::new();
    for (class, pairs) in support.iter() {
        let scored: Vec<Option<SegmentMatch>> = corpus
            .par_iter()
            .map(|utt| -> Result<Option<SegmentMatch>> {
                let mut best: Option<SegmentMatch> = None;
                for pair in pairs {
                    let m = match qbe_match(&pair.word, utt) {
                        Err(Error::QueryTooLong { .. }) => continue,
                        other => other?,
                    };
                    if best.as_ref().is_none_or(|b| m.score > b.score) {
                        best = Some(m);
                    }
                }
                Ok(best.map(|m| SegmentMatch { predicted_class: Some(class), ..m }))
            })
            .collect::<Result<_>>()?;
        let mut segments: Vec<SegmentMatch> = scored.into_iter().flatten().collect();
        segments.sort_by(rank_segments);
        if segments.len() < n {
            shortages.push(Shortage { class, requested: n, available: segments.len() });
        }
        segments.truncate(n);
        per_class.insert(class, segments);
    }
    Ok(Mined { per_class, shortages })
}

/// Mean over cells, the default image embedder for mining.
pub fn mean_cell_embedding(grid: &PixelGrid) -> Embedding {
    grid.mean_cell()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d = norm(a) * norm(b);
    if d > 0.0 {
        dot(a, b) / d
    } else {
        0.0
    }
}

/// For each class, the `n` corpus images with the highest maximum cosine
/// similarity to the class's support images.
pub fn mine_image_pairs<F>(
    support: &SupportSet,
    corpus: &[(&str, &PixelGrid)],
    n: usize,
    embedder: F,
) -> Result<Mined<ImageMatch>>
where
    F: Fn(&PixelGrid) -> Embedding + Sync,
{
    check_n(n)?;
    let corpus_emb: Vec<Embedding> = corpus.par_iter().map(|(_, g)| embedder(g)).collect();
    let mut per_class = BTreeMap::new();
    let mut shortages = Vec::new();
    for (class, pairs) in support.iter() {
        let queries: Vec<Embedding> = pairs.iter().map(|p| embedder(&p.image)).collect();
        let mut matches: Vec<ImageMatch> = corpus
            .iter()
            .zip(&corpus_emb)
            .map(|((id, _), e)| ImageMatch {
                image_id: id.to_string(),
                score: queries.iter().map(|q| cosine(q.as_slice(), e.as_slice())).fold(f64::NEG_INFINITY, f64::max),
                predicted_class: class,
            })
            .collect();
        matches.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.image_id.cmp(&b.image_id)));
        if matches.len() < n {
            shortages.push(Shortage { class, requested: n, available: matches.len() });
        }
        matches.truncate(n);
        per_class.insert(class, matches);
    }
    Ok(Mined { per_class, shortages })
}

/// One mined word paired with one mined image.
#[derive(Debug, Clone, PartialEq)]
pub struct MinedPair {
    pub segment: SegmentMatch,
    /// Raw feature crop of the segment.
    pub word: FrameSequence,
    pub image: ImageMatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinedPairSet {
    pub n: usize,
    pub per_class: BTreeMap<ClassId, Vec<MinedPair>>,
}

/// Pairs the `r`-th mined word with the `r`-th mined image of each class.
/// `utterance` looks up a corpus utterance by id.
pub fn pair_mined<'a>(
    audio: &Mined<SegmentMatch>,
    images: &Mined<ImageMatch>,
    n: usize,
    utterance: impl Fn(&str) -> Option<&'a FrameSequence>,
) -> Result<MinedPairSet> {
    let mut per_class = BTreeMap::new();
    for (class, segments) in &audio.per_class {
        let imgs = images.per_class.get(class).map(Vec::as_slice).unwrap_or(&[]);
        let mut pairs = Vec::new();
        for (seg, img) in segments.iter().zip(imgs) {
            let utt = utterance(&seg.utterance_id)
                .ok_or_else(|| Error::Contract(format!("unknown utterance {}", seg.utterance_id)))?;
            let id = format!("{}[{}..={}]", seg.utterance_id, seg.start_frame, seg.end_frame);
            pairs.push(MinedPair {
                segment: seg.clone(),
                word: utt.crop(seg.start_frame, seg.end_frame, id)?,
                image: img.clone(),
            });
        }
        per_class.insert(*class, pairs);
    }
    Ok(MinedPairSet { n, per_class })
}

/// Ground-truth class of a segment: the aligned word overlapping it most,
/// earliest span on ties.
pub fn segment_truth(segment: &SegmentMatch, alignments: &[AlignmentSpan]) -> Option<ClassId> {
    let mut best: Option<(usize, ClassId)> = None;
    for span in alignments {
        let o = span.overlap(segment.start_frame, segment.end_frame);
        if o > 0 && best.is_none_or(|(b, _)| o > b) {
            best = Some((o, span.class));
        }
    }
    best.map(|(_, c)| c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionReport {
    pub per_class: BTreeMap<ClassId, f64>,
    /// Mean of the per-class precisions.
    pub aggregate: f64,
}

/// Per-class precision, given each mined item's ground-truth label
/// (`None` when the item has no label).
pub fn pair_precision(truth: &BTreeMap<ClassId, Vec<Option<ClassId>>>) -> Result<PrecisionReport> {
    let mut per_class = BTreeMap::new();
    for (class, labels) in truth {
        if labels.is_empty() {
            continue;
        }
        let correct = labels.iter().filter(|l| **l == Some(*class)).count();
        per_class.insert(*class, correct as f64 / labels.len() as f64);
    }
    if per_class.is_empty() {
        return Err(Error::Degenerate("precision is undefined for an empty mined set".into()));
    }
    let aggregate = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok(PrecisionReport { per_class, aggregate })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub count: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl ScoreSummary {
    pub fn of(scores: impl IntoIterator<Item = f64>) -> Option<Self> {
        let scores: Vec<f64> = scores.into_iter().collect();
        if scores.is_empty() {
            return None;
        }
        Some(ScoreSummary {
            count: scores.len(),
            min: scores.iter().copied().fold(f64::INFINITY, f64::min),
            mean: scores.iter().sum::<f64>() / scores.len() as f64,
            max: scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

pub fn score_summaries<T>(mined: &Mined<T>, score: impl Fn(&T) -> f64) -> BTreeMap<ClassId, ScoreSummary> {
    mined.per_class.iter().filter_map(|(c, v)| ScoreSummary::of(v.iter().map(&score)).map(|s| (*c, s))).collect()
}
