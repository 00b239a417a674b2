//! Evaluation protocols: few-shot classification and retrieval, visually
//! prompted keyword localisation, and the mutual-exclusivity battery.

pub mod fewshot;
pub mod me;
pub mod vpkl;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::types::ClassId;

pub use fewshot::{classification_report, few_shot_classify, few_shot_retrieval, retrieval_report};
pub use me::{me_accuracy, me_build_trials, me_table, Expected, MeVariant, Side, TrialSpec};
pub use vpkl::{select_theta, vpkl_evaluate, vpkl_scores, UtteranceRef, VpklReport, VpklScores};

/// Common report shape for every task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub seed: u64,
    pub trial_count: usize,
    /// Accuracy, P@N or F1 depending on the task, as a fraction.
    pub aggregate: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_class: BTreeMap<ClassId, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metrics: BTreeMap<String, f64>,
}

/// Mean of per-class hit rates from `(class, credit)` records, plus the
/// overall mean credit.
pub(crate) fn tally(records: &[(ClassId, f64)]) -> (BTreeMap<ClassId, f64>, f64) {
    let mut sums: BTreeMap<ClassId, (f64, usize)> = BTreeMap::new();
    for (c, v) in records {
        let e = sums.entry(*c).or_default();
        e.0 += v;
        e.1 += 1;
    }
    let per_class = sums.into_iter().map(|(c, (s, n))| (c, s / n as f64)).collect();
    let overall =
        if records.is_empty() { 0.0 } else { records.iter().map(|(_, v)| v).sum::<f64>() / records.len() as f64 };
    (per_class, overall)
}
