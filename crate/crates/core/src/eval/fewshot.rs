use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::{tally, EvalReport};
use crate::model::Scorer;
use crate::rng::RandomSource;
use crate::types::{ClassId, FrameSequence, MatchingSet, PixelGrid};

/// Class of the best-scoring matching image; the lowest class id wins ties.
pub fn few_shot_classify<S: Scorer + ?Sized>(
    scorer: &S,
    query: &FrameSequence,
    matching: &MatchingSet,
) -> Result<ClassId> {
    let mut best: Option<(ClassId, f64)> = None;
    for (class, image) in matching.iter() {
        let s = scorer.word_image_score(query, image)?;
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((class, s));
        }
    }
    best.map(|(c, _)| c).ok_or_else(|| Error::Contract("matching set is empty".into()))
}

/// Precision among the `n` pool images scoring highest for `query`.
/// Equal scores keep pool order.
pub fn few_shot_retrieval<S: Scorer + ?Sized>(
    scorer: &S,
    query: &FrameSequence,
    query_class: ClassId,
    pool: &[(ClassId, &PixelGrid)],
    n: usize,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::Contract("N must be at least 1".into()));
    }
    if n > pool.len() {
        return Err(Error::Contract(format!("N = {n} exceeds the pool size {}", pool.len())));
    }
    let scores = pool.iter().map(|(_, g)| scorer.word_image_score(query, g)).collect::<Result<Vec<f64>>>()?;
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let hits = order[..n].iter().filter(|&&i| pool[i].0 == query_class).count();
    Ok(hits as f64 / n as f64)
}

/// Classification accuracy over `queries`. Each query gets its own matching
/// set holding one randomly drawn image per class.
pub fn classification_report<S: Scorer + ?Sized>(
    scorer: &S,
    queries: &[(ClassId, &FrameSequence)],
    images: &BTreeMap<ClassId, Vec<&PixelGrid>>,
    rng: &mut RandomSource,
) -> Result<EvalReport> {
    if images.values().any(Vec::is_empty) {
        return Err(Error::Contract("every matching class needs at least one image".into()));
    }
    let episodes: Vec<Vec<(ClassId, usize)>> =
        queries.iter().map(|_| images.iter().map(|(c, v)| (*c, rng.random_range(0..v.len()))).collect()).collect();
    let records = queries
        .par_iter()
        .zip(&episodes)
        .map(|((class, query), picks)| -> Result<(ClassId, f64)> {
            let matching = MatchingSet::new(picks.iter().map(|(c, i)| (*c, images[c][*i].clone())).collect())?;
            let predicted = few_shot_classify(scorer, query, &matching)?;
            Ok((*class, if predicted == *class { 1.0 } else { 0.0 }))
        })
        .collect::<Result<Vec<_>>>()?;
    let (per_class, aggregate) = tally(&records);
    Ok(EvalReport {
        task: "few_shot_classification".into(),
        seed: rng.seed(),
        trial_count: records.len(),
        aggregate,
        per_class,
        metrics: BTreeMap::new(),
    })
}

/// P@N for every query, with N set to the number of pool images of the
/// query's class. The aggregate is the mean over classes.
pub fn retrieval_report<S: Scorer + ?Sized>(
    scorer: &S,
    queries: &[(ClassId, &FrameSequence)],
    pool: &[(ClassId, &PixelGrid)],
    seed: u64,
) -> Result<EvalReport> {
    let records = queries
        .par_iter()
        .map(|(class, query)| -> Result<(ClassId, f64)> {
            let n = pool.iter().filter(|(c, _)| c == class).count();
            Ok((*class, few_shot_retrieval(scorer, query, *class, pool, n)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let (per_class, _) = tally(&records);
    let aggregate = if per_class.is_empty() { 0.0 } else { per_class.values().sum::<f64>() / per_class.len() as f64 };
    Ok(EvalReport {
        task: "few_shot_retrieval".into(),
        seed,
        trial_count: records.len(),
        aggregate,
        per_class,
        metrics: BTreeMap::new(),
    })
}
