//! The mutual-exclusivity test battery.
//!
//! Every trial shows a spoken query and two images. A model picks the image
//! it scores higher; equal scores earn half credit, so a trial's outcome never
//! depends on which image is shown first.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{tally, EvalReport};
use crate::model::Scorer;
use crate::rng::RandomSource;
use crate::types::{ClassId, Familiarity, FrameSequence, LabeledItem, Language, PixelGrid, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeVariant {
    FamiliarFamiliar,
    FamiliarNovel,
    FamiliarNovelStar,
    UnderlineFamiliarNovel,
    NovelNovel,
}

impl MeVariant {
    pub const ALL: [MeVariant; 5] = [
        MeVariant::FamiliarFamiliar,
        MeVariant::FamiliarNovel,
        MeVariant::FamiliarNovelStar,
        MeVariant::UnderlineFamiliarNovel,
        MeVariant::NovelNovel,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MeVariant::FamiliarFamiliar => "familiar_familiar",
            MeVariant::FamiliarNovel => "familiar_novel",
            MeVariant::FamiliarNovelStar => "familiar_novel_star",
            MeVariant::UnderlineFamiliarNovel => "underline_familiar_novel",
            MeVariant::NovelNovel => "novel_novel",
        }
    }
}

impl std::str::FromStr for MeVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MeVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown ME variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    A,
    B,
}

impl Side {
    fn flip(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expected {
    Image(Side),
    /// No right answer; `same_class` marks the image sharing the query's class.
    Chance {
        same_class: Side,
    },
}

impl Expected {
    fn target(self) -> Side {
        match self {
            Expected::Image(s) | Expected::Chance { same_class: s } => s,
        }
    }

    fn flip(self) -> Expected {
        match self {
            Expected::Image(s) => Expected::Image(s.flip()),
            Expected::Chance { same_class } => Expected::Chance { same_class: same_class.flip() },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate<'a> {
    pub id: &'a str,
    pub class: ClassId,
    pub grid: &'a PixelGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialSpec<'a> {
    pub variant: MeVariant,
    pub query_id: &'a str,
    pub query_class: ClassId,
    pub query: &'a FrameSequence,
    pub image_a: Candidate<'a>,
    pub image_b: Candidate<'a>,
    pub correct: Expected,
}

impl<'a> TrialSpec<'a> {
    /// The same trial with the two images exchanged.
    pub fn swapped(&self) -> TrialSpec<'a> {
        TrialSpec {
            image_a: self.image_b.clone(),
            image_b: self.image_a.clone(),
            correct: self.correct.flip(),
            ..self.clone()
        }
    }
}

struct Pools<'a> {
    words: BTreeMap<ClassId, Vec<&'a LabeledItem>>,
    images: BTreeMap<ClassId, Vec<&'a LabeledItem>>,
    familiar: Vec<ClassId>,
    novel: Vec<ClassId>,
}

impl<'a> Pools<'a> {
    fn new(dataset: &'a Dataset, language: &Language) -> Self {
        let mut words: BTreeMap<ClassId, Vec<&LabeledItem>> = BTreeMap::new();
        let mut images: BTreeMap<ClassId, Vec<&LabeledItem>> = BTreeMap::new();
        for item in &dataset.items {
            let Some(class) = item.class else { continue };
            if item.split != Split::Test {
                continue;
            }
            if item.is_word() && item.language.as_ref() == Some(language) {
                words.entry(class).or_default().push(item);
            } else if item.is_image() {
                images.entry(class).or_default().push(item);
            }
        }
        let usable = |f: Familiarity| -> Vec<ClassId> {
            dataset.classes_with(f).into_iter().filter(|c| words.contains_key(c) && images.contains_key(c)).collect()
        };
        let familiar = usable(Familiarity::Familiar);
        let novel = usable(Familiarity::Novel);
        Pools { words, images, familiar, novel }
    }

    fn class(from: &[ClassId], except: Option<ClassId>, rng: &mut RandomSource) -> ClassId {
        let choices: Vec<ClassId> = from.iter().copied().filter(|c| Some(*c) != except).collect();
        choices[rng.random_range(0..choices.len())]
    }

    fn image(&self, class: ClassId, rng: &mut RandomSource) -> Candidate<'a> {
        let pool = &self.images[&class];
        let item = pool[rng.random_range(0..pool.len())];
        Candidate { id: &item.id, class, grid: item.grid().expect("image pool holds images") }
    }
}

/// Builds `n_trials` test-split trials of `variant` with queries spoken in
/// `language`.
pub fn me_build_trials<'a>(
    dataset: &'a Dataset,
    variant: MeVariant,
    n_trials: usize,
    language: &Language,
    rng: &mut RandomSource,
) -> Result<Vec<TrialSpec<'a>>> {
    let pools = Pools::new(dataset, language);
    if pools.familiar.len() < 2 || pools.novel.len() < 2 {
        return Err(Error::Config(format!(
            "ME trials need at least 2 familiar and 2 novel classes with test words in `{language}` and test images; found {} and {}",
            pools.familiar.len(),
            pools.novel.len()
        )));
    }
    let mut trials = Vec::with_capacity(n_trials);
    for _ in 0..n_trials {
        let query_pool = match variant {
            MeVariant::FamiliarFamiliar | MeVariant::UnderlineFamiliarNovel => &pools.familiar,
            _ => &pools.novel,
        };
        let qc = Pools::class(query_pool, None, rng);
        let words = &pools.words[&qc];
        let query = words[rng.random_range(0..words.len())];
        // `target` is the image the expected answer points at.
        let (target, other) = match variant {
            MeVariant::FamiliarFamiliar => {
                (pools.image(qc, rng), pools.image(Pools::class(&pools.familiar, Some(qc), rng), rng))
            }
            MeVariant::FamiliarNovel => {
                (pools.image(qc, rng), pools.image(Pools::class(&pools.familiar, None, rng), rng))
            }
            MeVariant::FamiliarNovelStar => (
                pools.image(Pools::class(&pools.novel, Some(qc), rng), rng),
                pools.image(Pools::class(&pools.familiar, None, rng), rng),
            ),
            MeVariant::UnderlineFamiliarNovel => {
                (pools.image(qc, rng), pools.image(Pools::class(&pools.novel, None, rng), rng))
            }
            MeVariant::NovelNovel => {
                (pools.image(qc, rng), pools.image(Pools::class(&pools.novel, Some(qc), rng), rng))
            }
        };
        let side = if rng.random_bool(0.5) { Side::A } else { Side::B };
        let (image_a, image_b) = match side {
            Side::A => (target, other),
            Side::B => (other, target),
        };
        let correct = match variant {
            MeVariant::NovelNovel => Expected::Chance { same_class: side },
            _ => Expected::Image(side),
        };
        trials.push(TrialSpec {
            variant,
            query_id: &query.id,
            query_class: qc,
            query: query.frames().expect("word pool holds words"),
            image_a,
            image_b,
            correct,
        });
    }
    Ok(trials)
}

/// Credit for one trial: 1 when the higher-scored image is the target,
/// 0.5 on a tie.
pub fn me_trial_credit<S: Scorer + ?Sized>(scorer: &S, trial: &TrialSpec<'_>) -> Result<f64> {
    let a = scorer.word_image_score(trial.query, trial.image_a.grid)?;
    let b = scorer.word_image_score(trial.query, trial.image_b.grid)?;
    let target = trial.correct.target();
    Ok(if a == b {
        0.5
    } else if (a > b) == (target == Side::A) {
        1.0
    } else {
        0.0
    })
}

/// Mean credit over trials. For `novel_novel` the credit counts picks of
/// the same-class image. Per-variant means go to `metrics`.
pub fn me_accuracy<S: Scorer + ?Sized>(scorer: &S, trials: &[TrialSpec<'_>], seed: u64) -> Result<EvalReport> {
    if trials.is_empty() {
        return Err(Error::Contract("ME evaluation needs at least one trial".into()));
    }
    let credits = trials.par_iter().map(|t| me_trial_credit(scorer, t)).collect::<Result<Vec<f64>>>()?;
    let records: Vec<(ClassId, f64)> = trials.iter().map(|t| t.query_class).zip(credits.iter().copied()).collect();
    let (per_class, aggregate) = tally(&records);
    let mut by_variant: BTreeMap<MeVariant, (f64, usize)> = BTreeMap::new();
    for (t, c) in trials.iter().zip(&credits) {
        let e = by_variant.entry(t.variant).or_default();
        e.0 += c;
        e.1 += 1;
    }
    let task = match by_variant.keys().collect::<Vec<_>>().as_slice() {
        [only] => format!("me_{}", only.as_str()),
        _ => "me".to_string(),
    };
    Ok(EvalReport {
        task,
        seed,
        trial_count: trials.len(),
        aggregate,
        per_class,
        metrics: by_variant.into_iter().map(|(v, (s, n))| (v.as_str().to_string(), s / n as f64)).collect(),
    })
}

/// Plain-text table, one row per model and one column per variant, in percent.
pub fn me_table(rows: &[(String, BTreeMap<MeVariant, f64>)]) -> String {
    let width = rows.iter().map(|(m, _)| m.len()).max().unwrap_or(0).max("model".len());
    let mut out = format!("{:<width$}", "model");
    for v in MeVariant::ALL {
        let _ = write!(out, "  {:>24}", v.as_str());
    }
    out.push('\n');
    for (model, values) in rows {
        let _ = write!(out, "{model:<width$}");
        for v in MeVariant::ALL {
            match values.get(&v) {
                Some(x) => {
                    let _ = write!(out, "  {:>24.2}", 100.0 * x);
                }
                None => {
                    let _ = write!(out, "  {:>24}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, GeneratorConfig, LanguageSpec, SplitCounts};
    use crate::model::ExchangeableScorer;

    fn small() -> Dataset {
        let cfg = GeneratorConfig {
            n_familiar: 3,
            n_novel: 3,
            n_background: 1,
            languages: vec![LanguageSpec { name: Language::english(), offset_scale: 0.0 }],
            feature_dim: 8,
            words_per_class: SplitCounts { train: 2, dev: 1, test: 3 },
            images_per_class: SplitCounts { train: 2, dev: 1, test: 3 },
            ..GeneratorConfig::default()
        };
        generate_dataset(&cfg, 1).unwrap()
    }

    fn familiarity(d: &Dataset, c: ClassId) -> Familiarity {
        d.manifest.class(c).unwrap().familiarity
    }

    #[test]
    fn trials_obey_construction_rules() {
        let d = small();
        let en = Language::english();
        for variant in MeVariant::ALL {
            let trials = me_build_trials(&d, variant, 200, &en, &mut RandomSource::new(3)).unwrap();
            for t in &trials {
                let (a, b) = (t.image_a.class, t.image_b.class);
                let q = familiarity(&d, t.query_class);
                let target = if t.correct.target() == Side::A { &t.image_a } else { &t.image_b };
                let other = if t.correct.target() == Side::A { &t.image_b } else { &t.image_a };
                assert_ne!(a, b);
                match variant {
                    MeVariant::FamiliarFamiliar => {
                        assert_eq!(q, Familiarity::Familiar);
                        assert_eq!(target.class, t.query_class);
                        assert_eq!(familiarity(&d, other.class), Familiarity::Familiar);
                    }
                    MeVariant::FamiliarNovel => {
                        assert_eq!(q, Familiarity::Novel);
                        assert_eq!(familiarity(&d, target.class), Familiarity::Novel);
                        assert_eq!(familiarity(&d, other.class), Familiarity::Familiar);
                    }
                    MeVariant::FamiliarNovelStar => {
                        assert_eq!(q, Familiarity::Novel);
                        assert_ne!(target.class, t.query_class);
                        assert_eq!(familiarity(&d, target.class), Familiarity::Novel);
                        assert_eq!(familiarity(&d, other.class), Familiarity::Familiar);
                    }
                    MeVariant::UnderlineFamiliarNovel => {
                        assert_eq!(q, Familiarity::Familiar);
                        assert_eq!(target.class, t.query_class);
                        assert_eq!(familiarity(&d, other.class), Familiarity::Novel);
                    }
                    MeVariant::NovelNovel => {
                        assert!(matches!(t.correct, Expected::Chance { .. }));
                        assert_eq!(target.class, t.query_class);
                        assert_eq!(familiarity(&d, other.class), Familiarity::Novel);
                    }
                }
            }
        }
    }

    #[test]
    fn too_few_classes_is_a_construction_error() {
        let mut d = small();
        let novel = d.classes_with(Familiarity::Novel);
        d.items.retain(|i| i.class.is_none_or(|c| c == novel[0] || !novel.contains(&c)));
        let r = me_build_trials(&d, MeVariant::NovelNovel, 5, &Language::english(), &mut RandomSource::new(0));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn swapping_images_keeps_accuracy() {
        let d = small();
        let en = Language::english();
        let trials = me_build_trials(&d, MeVariant::FamiliarNovel, 300, &en, &mut RandomSource::new(4)).unwrap();
        let swapped: Vec<_> = trials.iter().map(TrialSpec::swapped).collect();
        let s = ExchangeableScorer::new(2);
        assert_eq!(me_accuracy(&s, &trials, 0).unwrap(), me_accuracy(&s, &swapped, 0).unwrap());
    }

    #[test]
    fn table_has_five_columns() {
        let row = BTreeMap::from([(MeVariant::NovelNovel, 0.5)]);
        let t = me_table(&[("random".into(), row)]);
        let header = t.lines().next().unwrap();
        assert_eq!(header.split_whitespace().count(), 6);
        assert!(t.contains("50.00"));
    }
}
