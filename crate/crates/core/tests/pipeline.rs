use vgs_core::attention::{self, SimilarityHead};
use vgs_core::data::{generate_dataset, GeneratorConfig};
use vgs_core::eval::{classification_report, select_theta, vpkl_scores};
use vgs_core::pipeline::{self, PipelineConfig};
use vgs_core::train::{load_checkpoint, save_checkpoint};
use vgs_core::*;

#[test]
fn two_class_ground_truth_finetune_classifies_perfectly() {
    let gen = GeneratorConfig { n_familiar: 2, orthogonal_prototypes: true, ..pipeline::desk_generator() };
    let d = generate_dataset(&gen, 3).unwrap();
    let cfg = PipelineConfig { ground_truth: true, ..PipelineConfig::default() };
    let run = pipeline::run_pipeline(&d, &cfg).unwrap();
    assert!(run.mined.is_none());
    let en = Language::english();
    let fam = d.classes_with(Familiarity::Familiar);
    let queries = pipeline::word_queries(&d, &fam, Split::Test, &en);
    let images = pipeline::images_by_class(&d, &fam, Split::Test);
    let r = classification_report(&WordToImage(run.model()), &queries, &images, &mut RandomSource::new(0)).unwrap();
    assert_eq!(r.aggregate, 1.0);
}

#[test]
fn every_stage_leaves_a_reloadable_checkpoint() {
    let d = generate_dataset(&pipeline::desk_generator(), 4).unwrap();
    let mut cfg = PipelineConfig { unimodal_epochs: 1, ..PipelineConfig::default() };
    cfg.background.epochs = 1;
    cfg.finetune.epochs = 1;
    let run = pipeline::run_pipeline(&d, &cfg).unwrap();
    let stages: Vec<Stage> = run.checkpoints.iter().map(|c| c.stage).collect();
    assert_eq!(stages, [Stage::Random, Stage::UnimodalInit, Stage::Background, Stage::Finetune]);
    let dir = tempfile::tempdir().unwrap();
    for (i, c) in run.checkpoints.iter().enumerate() {
        let path = dir.path().join(format!("{i}.mmt"));
        save_checkpoint(&path, c).unwrap();
        assert_eq!(&load_checkpoint(&path).unwrap(), c);
    }
}

/// Matches `vpkl_scores` against a direct recount over every
/// (query, utterance) pair.
#[test]
fn vpkl_metrics_match_a_hand_scored_oracle() {
    let d = generate_dataset(&pipeline::desk_generator(), 0).unwrap();
    let en = Language::english();
    let fam = d.classes_with(Familiarity::Familiar);
    let oracle =
        PrototypeOracle::new(d.prototypes.as_ref().unwrap(), &fam).unwrap().with_head(SimilarityHead::MaxMatchmap);
    let queries = pipeline::image_queries(&d, &fam, Split::Test, 2);
    let utts = pipeline::utterance_refs(&d, Split::Test, &en);
    let scores = vpkl_scores(&oracle, &queries, &utts, 0.5).unwrap();
    let theta = select_theta(&scores).unwrap();
    let report = scores.report(theta).unwrap();

    let (mut tp, mut fp, mut fn_, mut hits) = (0, 0, 0, 0);
    for (class, image) in &queries {
        let cells = oracle.embed_grid(image).unwrap();
        for u in &utts {
            let m = attention::compute_matchmap(&oracle.embed_frames(u.frames).unwrap(), &cells).unwrap();
            let per_frame: Vec<f64> =
                (0..m.frames()).map(|t| m.row(t).iter().cloned().fold(f64::MIN, f64::max)).collect();
            let score = per_frame.iter().cloned().fold(f64::MIN, f64::max);
            let peak = per_frame.iter().position(|s| *s == score).unwrap();
            let spans: Vec<_> = u.alignments.iter().filter(|a| a.class == *class).collect();
            match (score >= theta, !spans.is_empty()) {
                (true, true) => {
                    tp += 1;
                    hits += usize::from(spans.iter().any(|a| a.start <= peak && peak <= a.end));
                }
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    assert_eq!((report.true_positives, report.false_positives, report.false_negatives), (tp, fp, fn_));
    let (p, r) = (tp as f64 / (tp + fp) as f64, tp as f64 / (tp + fn_) as f64);
    assert_eq!(report.precision, p);
    assert_eq!(report.recall, r);
    assert!((report.f1 - 2.0 * p * r / (p + r)).abs() < 1e-15);
    assert_eq!(report.localisation_accuracy, hits as f64 / tp as f64);
    assert_eq!(report.localisation_precision, hits as f64 / (tp + fp) as f64);
}
