use vgs_core::data::generate_dataset;
use vgs_core::eval::{few_shot_retrieval, me_build_trials, Expected, Side};
use vgs_core::pipeline;
use vgs_core::*;

#[test]
fn novel_novel_placement_is_balanced() {
    let d = generate_dataset(&GeneratorConfig::default(), 0).unwrap();
    let trials =
        me_build_trials(&d, MeVariant::NovelNovel, 10_000, &Language::english(), &mut RandomSource::new(0)).unwrap();
    let left = trials.iter().filter(|t| t.correct == Expected::Chance { same_class: Side::A }).count();
    let rate = left as f64 / trials.len() as f64;
    assert!((rate - 0.5).abs() <= 0.015, "{rate}");
    assert!(trials.iter().all(|t| t.image_a.class != t.image_b.class));
}

#[test]
fn precision_never_rises_once_the_class_is_exhausted() {
    let d = generate_dataset(&pipeline::desk_generator(), 1).unwrap();
    let fam = d.classes_with(Familiarity::Familiar);
    let pool: Vec<(ClassId, &PixelGrid)> = pipeline::images_by_class(&d, &fam, Split::Test)
        .into_iter()
        .flat_map(|(c, v)| v.into_iter().map(move |g| (c, g)))
        .collect();
    let scorer = ExchangeableScorer::new(3);
    for (class, q) in pipeline::word_queries(&d, &fam, Split::Test, &Language::english()).into_iter().take(10) {
        let in_class = pool.iter().filter(|(c, _)| *c == class).count();
        let p: Vec<f64> = (1..=pool.len()).map(|n| few_shot_retrieval(&scorer, q, class, &pool, n).unwrap()).collect();
        // First cutoff at which every in-class image has been retrieved.
        let exhausted = (0..p.len()).find(|&i| (p[i] * (i + 1) as f64).round() as usize == in_class).unwrap();
        assert!(p[exhausted..].windows(2).all(|w| w[1] <= w[0]), "{p:?}");
    }
}
