use std::collections::BTreeMap;

use vgs_core::data::{generate_dataset, GeneratorConfig};
use vgs_core::eval::{classification_report, select_theta, vpkl_scores};
use vgs_core::mining::qbe_match;
use vgs_core::pipeline;
use vgs_core::*;

fn clean() -> GeneratorConfig {
    GeneratorConfig { noise: 0.0, orthogonal_prototypes: true, ..pipeline::desk_generator() }
}

#[test]
fn clean_word_matches_its_utterance_at_the_aligned_span() {
    let d = generate_dataset(&clean(), 0).unwrap();
    let en = Language::english();
    let words: BTreeMap<&str, &FrameSequence> =
        d.words(Split::Train, &en).map(|w| (w.id.as_str(), w.frames().unwrap())).collect();
    let mut checked = 0;
    for utt in d.utterances(Split::Train, &en).take(40) {
        for span in &utt.alignments {
            let word = words[span.word_id.as_deref().unwrap()];
            let m = qbe_match(word, utt.frames().unwrap()).unwrap();
            assert!((m.score - 1.0).abs() < 1e-12, "{} scored {}", utt.id, m.score);
            // Words of one class are identical without noise, so an earlier
            // copy may win the tie; the aligned start must still score 1.
            let aligned = utt.frames().unwrap().crop(span.start, span.end, "span").unwrap();
            assert!((qbe_match(word, &aligned).unwrap().score - 1.0).abs() < 1e-12);
            checked += 1;
        }
    }
    assert!(checked > 40);
}

#[test]
fn same_seed_gives_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_dataset(&pipeline::desk_generator(), 9).unwrap().save(a.path()).unwrap();
    generate_dataset(&pipeline::desk_generator(), 9).unwrap().save(b.path()).unwrap();
    let manifest = std::fs::read(a.path().join("manifest.json")).unwrap();
    assert_eq!(manifest, std::fs::read(b.path().join("manifest.json")).unwrap());
    let loaded = Dataset::load(a.path()).unwrap();
    for record in &loaded.manifest.items {
        let (x, y) = (std::fs::read(a.path().join(&record.tensor)), std::fs::read(b.path().join(&record.tensor)));
        assert_eq!(x.unwrap(), y.unwrap(), "{}", record.tensor);
    }
}

#[test]
fn confound_fraction_is_exact() {
    let cfg = GeneratorConfig { context_confound: Some(0.3), ..clean() };
    let d = generate_dataset(&cfg, 1).unwrap();
    let protos = d.prototypes.as_ref().unwrap();
    // Without noise a cell is zero, the class prototype, or the motif.
    let mut counts: BTreeMap<(ClassId, Split), (usize, usize)> = BTreeMap::new();
    for split in Split::ALL {
        for item in d.images(split) {
            let class = item.class.unwrap();
            let proto: Vec<f32> = protos.visual[class.0 as usize].iter().map(|v| *v as f32).collect();
            let has_motif = item.grid().unwrap().cells().any(|c| {
                let c32: Vec<f32> = c.iter().map(|v| *v as f32).collect();
                c.iter().any(|v| *v != 0.0) && c32 != proto
            });
            let e = counts.entry((class, split)).or_default();
            e.0 += usize::from(has_motif);
            e.1 += 1;
        }
    }
    assert!(!counts.is_empty());
    for ((class, split), (with, total)) in counts {
        assert_eq!(with * 10, total * 3, "class {class} {split:?}: {with} of {total}");
    }
}

#[test]
fn clean_oracle_is_perfect_on_classification_and_detection() {
    let d = generate_dataset(&clean(), 2).unwrap();
    let en = Language::english();
    let fam = d.classes_with(Familiarity::Familiar);
    let oracle = PrototypeOracle::new(d.prototypes.as_ref().unwrap(), &fam).unwrap();
    let queries = pipeline::word_queries(&d, &fam, Split::Test, &en);
    let images = pipeline::images_by_class(&d, &fam, Split::Test);
    let r = classification_report(&oracle, &queries, &images, &mut RandomSource::new(0)).unwrap();
    assert_eq!(r.aggregate, 1.0);

    let scores = vpkl_scores(
        &oracle,
        &pipeline::image_queries(&d, &fam, Split::Test, 2),
        &pipeline::utterance_refs(&d, Split::Test, &en),
        0.5,
    )
    .unwrap();
    let report = scores.report(select_theta(&scores).unwrap()).unwrap();
    assert_eq!((report.f1, report.localisation_accuracy), (1.0, 1.0));
}

#[test]
fn more_noise_never_raises_match_scores_on_true_keywords() {
    let en = Language::english();
    for seed in 0..3 {
        let mut previous = f64::INFINITY;
        for noise in [0.0, 0.05, 0.1, 0.2, 0.4, 0.8] {
            let d = generate_dataset(&GeneratorConfig { noise, ..pipeline::desk_generator() }, seed).unwrap();
            let fam = d.classes_with(Familiarity::Familiar);
            let queries: BTreeMap<ClassId, &FrameSequence> =
                pipeline::word_queries(&d, &fam, Split::Dev, &en).into_iter().collect();
            let mut total = 0.0;
            let mut n = 0;
            for utt in d.utterances(Split::Test, &en).take(40) {
                let u = utt.frames().unwrap();
                for span in &utt.alignments {
                    if let Some(q) = queries.get(&span.class) {
                        // Cropped to fit inside the span, so a clean query matches exactly.
                        let len = q.len().min(span.end - span.start + 1);
                        let q = q.crop(0, len - 1, "q").unwrap();
                        total += qbe_match(&q, u).unwrap().score;
                        n += 1;
                    }
                }
            }
            assert!(n > 0);
            let mean = total / n as f64;
            assert!(mean <= previous + 1e-12, "seed {seed}: noise {noise} raised the mean score to {mean}");
            previous = mean;
        }
    }
}
