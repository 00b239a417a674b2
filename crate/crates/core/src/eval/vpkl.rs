//! Visually prompted keyword localisation: does the object shown in an image
//! query occur as a spoken word in an utterance, and where?

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{self, LocalisationResult};
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::model::{utterance_image_score, Embedder};
use crate::types::{AlignmentSpan, ClassId, FrameSequence, PixelGrid};

#[derive(Debug, Clone, Copy)]
pub struct UtteranceRef<'a> {
    pub frames: &'a FrameSequence,
    pub alignments: &'a [AlignmentSpan],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VpklEntry {
    pub query: usize,
    pub query_class: ClassId,
    pub utterance: usize,
    pub score: f64,
    /// The keyword occurs in the utterance.
    pub present: bool,
    pub localisation: LocalisationResult,
    /// The peak frame lies inside a span of the keyword.
    pub peak_hit: bool,
}

/// Scores for every (query, utterance) pair, query-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VpklScores {
    pub tau: f64,
    pub entries: Vec<VpklEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VpklReport {
    pub theta: f64,
    pub tau: f64,
    pub pairs: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Peak hits among true detections.
    pub localisation_accuracy: f64,
    /// Peak hits among all detections.
    pub localisation_precision: f64,
    pub per_class_f1: BTreeMap<ClassId, f64>,
}

pub fn vpkl_scores<E: Embedder + ?Sized>(
    model: &E,
    queries: &[(ClassId, &PixelGrid)],
    utterances: &[UtteranceRef<'_>],
    tau: f64,
) -> Result<VpklScores> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Config(format!("tau = {tau} must lie in (0, 1]")));
    }
    let jobs: Vec<(usize, usize)> =
        (0..queries.len()).flat_map(|q| (0..utterances.len()).map(move |u| (q, u))).collect();
    let entries = jobs
        .par_iter()
        .map(|&(q, u)| -> Result<VpklEntry> {
            let (class, image) = queries[q];
            let utt = utterances[u];
            let (score, m) = utterance_image_score(model, utt.frames, image)?;
            let localisation = attention::localise(&m, tau)?;
            let spans: Vec<&AlignmentSpan> = utt.alignments.iter().filter(|a| a.class == class).collect();
            Ok(VpklEntry {
                query: q,
                query_class: class,
                utterance: u,
                score,
                present: !spans.is_empty(),
                peak_hit: spans.iter().any(|a| a.contains(localisation.peak_frame)),
                localisation,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VpklScores { tau, entries })
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let (p, r) = (ratio(tp, tp + fp), ratio(tp, tp + fn_));
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn counts<'a>(entries: impl Iterator<Item = &'a VpklEntry>, theta: f64) -> (usize, usize, usize, usize) {
    let (mut tp, mut fp, mut fn_, mut hits) = (0, 0, 0, 0);
    for e in entries {
        match (e.score >= theta, e.present) {
            (true, true) => {
                tp += 1;
                hits += usize::from(e.peak_hit);
            }
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    (tp, fp, fn_, hits)
}

impl VpklScores {
    pub fn report(&self, theta: f64) -> Result<VpklReport> {
        if !theta.is_finite() {
            return Err(Error::Config(format!("detection threshold {theta} is not finite")));
        }
        let (tp, fp, fn_, hits) = counts(self.entries.iter(), theta);
        let classes: std::collections::BTreeSet<ClassId> = self.entries.iter().map(|e| e.query_class).collect();
        let per_class_f1 = classes
            .into_iter()
            .map(|c| {
                let (tp, fp, fn_, _) = counts(self.entries.iter().filter(|e| e.query_class == c), theta);
                (c, f1(tp, fp, fn_))
            })
            .collect();
        Ok(VpklReport {
            theta,
            tau: self.tau,
            pairs: self.entries.len(),
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            f1: f1(tp, fp, fn_),
            localisation_accuracy: ratio(hits, tp),
            localisation_precision: ratio(hits, tp + fp),
            per_class_f1,
        })
    }
}

/// Threshold maximising detection F1 over the 0th, 1st, ..., 100th
/// percentiles of the observed scores. The lowest threshold wins ties.
pub fn select_theta(scores: &VpklScores) -> Result<f64> {
    let mut sorted: Vec<f64> = scores.entries.iter().map(|e| e.score).collect();
    if sorted.is_empty() {
        return Err(Error::Degenerate("no scores to calibrate a threshold on".into()));
    }
    sorted.sort_by(f64::total_cmp);
    let last = sorted.len() - 1;
    let mut best = (f64::NEG_INFINITY, sorted[0]);
    for k in 0..=100 {
        let theta = sorted[(k * last + 50) / 100];
        let (tp, fp, fn_, _) = counts(scores.entries.iter(), theta);
        let f = f1(tp, fp, fn_);
        if f > best.0 {
            best = (f, theta);
        }
    }
    Ok(best.1)
}

/// Detection at `theta` and localisation at `tau` over all
/// (query, utterance) pairs.
pub fn vpkl_evaluate<E: Embedder + ?Sized>(
    model: &E,
    queries: &[(ClassId, &PixelGrid)],
    utterances: &[UtteranceRef<'_>],
    theta: f64,
    tau: f64,
) -> Result<VpklReport> {
    if !theta.is_finite() {
        return Err(Error::Config(format!("detection threshold {theta} is not finite")));
    }
    vpkl_scores(model, queries, utterances, tau)?.report(theta)
}

impl VpklReport {
    pub fn to_eval_report(&self, seed: u64) -> EvalReport {
        let metrics = BTreeMap::from([
            ("theta".to_string(), self.theta),
            ("tau".to_string(), self.tau),
            ("precision".to_string(), self.precision),
            ("recall".to_string(), self.recall),
            ("f1".to_string(), self.f1),
            ("localisation_accuracy".to_string(), self.localisation_accuracy),
            ("localisation_precision".to_string(), self.localisation_precision),
        ]);
        EvalReport {
            task: "vpkl".into(),
            seed,
            trial_count: self.pairs,
            aggregate: self.f1,
            per_class: self.per_class_f1.clone(),
            metrics,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::SimilarityHead;
    use crate::types::FrameSequence;

    struct Identity;

    impl Embedder for Identity {
        fn embed_frames(&self, f: &FrameSequence) -> Result<FrameSequence> {
            Ok(f.clone())
        }
        fn embed_grid(&self, g: &PixelGrid) -> Result<PixelGrid> {
            Ok(g.clone())
        }
        fn head(&self) -> SimilarityHead {
            SimilarityHead::WordToImage
        }
    }

    fn e(c: usize) -> Vec<f64> {
        let mut v = vec![0.0; 3];
        v[c] = 1.0;
        v
    }

    #[test]
    fn planted_keyword_is_detected_and_localised() {
        let utt = FrameSequence::from_frames(&[e(0), e(0), e(1), e(1), e(1)], "u").unwrap();
        let spans = [
            AlignmentSpan { class: ClassId(0), start: 0, end: 1, word_id: None },
            AlignmentSpan { class: ClassId(1), start: 2, end: 4, word_id: None },
        ];
        let other = FrameSequence::from_frames(&[e(2), e(2)], "v").unwrap();
        let other_spans = [AlignmentSpan { class: ClassId(2), start: 0, end: 1, word_id: None }];
        let img1 = PixelGrid::from_cells(&[vec![0.0; 3], e(1)]).unwrap();
        let queries = [(ClassId(1), &img1)];
        let utts = [
            UtteranceRef { frames: &utt, alignments: &spans },
            UtteranceRef { frames: &other, alignments: &other_spans },
        ];
        let scores = vpkl_scores(&Identity, &queries, &utts, 0.5).unwrap();
        let theta = select_theta(&scores).unwrap();
        let r = scores.report(theta).unwrap();
        assert_eq!((r.f1, r.localisation_accuracy), (1.0, 1.0));
        assert_eq!(r.localisation_precision, 1.0);
        assert!(scores.entries[1].score < theta);
    }

    #[test]
    fn non_finite_theta_is_config_error() {
        let g = PixelGrid::from_cells(&[e(0)]).unwrap();
        let f = FrameSequence::from_frames(&[e(0)], "u").unwrap();
        let r = vpkl_evaluate(
            &Identity,
            &[(ClassId(0), &g)],
            &[UtteranceRef { frames: &f, alignments: &[] }],
            f64::NAN,
            0.5,
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
