//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;
use vgs_core::attention::{self, SimilarityHead};
use vgs_core::data::{generate_dataset, manifest::to_canonical_json, read_tensor, write_tensor, GeneratorConfig};
use vgs_core::eval::{
    classification_report, me_accuracy, me_build_trials, retrieval_report, select_theta, vpkl_scores, VpklReport,
};
use vgs_core::losses::{self, Anchor, BatchWord, EncodedBatch, LossConfig};
use vgs_core::mining::qbe_match;
use vgs_core::pipeline::{self, PipelineConfig, PipelineRun};
use vgs_core::train::save_checkpoint;
use vgs_core::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// `|a − b| ≤ tol·max(|a|, |b|)`, with a floor far below any tolerance so
/// that two exact zeros compare equal.
fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-12)
}

fn random_rows(rng: &mut RandomSource, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

// Brute-force oracles, written directly from the definitions.

fn oracle_matchmap(frames: &[Vec<f64>], cells: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; cells.len()]; frames.len()];
    for t in 0..frames.len() {
        for p in 0..cells.len() {
            for d in 0..frames[t].len() {
                m[t][p] += frames[t][d] * cells[p][d];
            }
        }
    }
    m
}

fn oracle_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn oracle_context(frames: &[Vec<f64>], cells: &[Vec<f64>]) -> f64 {
    let m = oracle_matchmap(frames, cells);
    let row_max: Vec<f64> = m.iter().map(|r| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect();
    let col_max: Vec<f64> =
        (0..cells.len()).map(|p| m.iter().map(|r| r[p]).fold(f64::NEG_INFINITY, f64::max)).collect();
    let (alpha, beta) = (oracle_softmax(&row_max), oracle_softmax(&col_max));
    let d = frames[0].len();
    let mut ca = vec![0.0; d];
    let mut cv = vec![0.0; d];
    for t in 0..frames.len() {
        for k in 0..d {
            ca[k] += alpha[t] * frames[t][k];
        }
    }
    for p in 0..cells.len() {
        for k in 0..d {
            cv[k] += beta[p] * cells[p][k];
        }
    }
    let dot: f64 = (0..d).map(|k| ca[k] * cv[k]).sum();
    let na: f64 = ca.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nv: f64 = cv.iter().map(|v| v * v).sum::<f64>().sqrt();
    dot / (na * nv)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = RandomSource::new(0);
    let mut failures = 0;
    for case in 0..1000 {
        let (t, p, d) = (rng.random_range(1..=8), rng.random_range(1..=12), rng.random_range(1..=6));
        let frames = random_rows(&mut rng, t, d);
        let cells = random_rows(&mut rng, p, d);
        let audio = FrameSequence::from_frames(&frames, format!("case{case}")).unwrap();
        let image = PixelGrid::from_cells(&cells).unwrap();

        let m = attention::compute_matchmap(&audio, &image).unwrap();
        let want = oracle_matchmap(&frames, &cells);
        let mut ok = (0..t).all(|i| (0..p).all(|j| rel_close(m.get(i, j), want[i][j], 1e-6)));
        let want_max = want.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
        ok &= rel_close(attention::max_similarity(&m).unwrap(), want_max, 1e-6);
        ok &= rel_close(attention::context_similarity(&audio, &image).unwrap(), oracle_context(&frames, &cells), 1e-6);

        let pooled: Vec<f64> = (0..d).map(|k| frames.iter().map(|f| f[k]).fold(f64::NEG_INFINITY, f64::max)).collect();
        let w2i = attention::word_to_image_similarity(&Embedding::new(pooled.clone()).unwrap(), &image).unwrap();
        let per_cell = oracle_matchmap(&[pooled], &cells).remove(0);
        ok &= w2i.per_cell.iter().zip(&per_cell).all(|(a, b)| rel_close(*a, *b, 1e-6));
        ok &= rel_close(w2i.score, per_cell.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 1e-6);
        failures += usize::from(!ok);
    }
    let elapsed = start.elapsed();
    outcome(
        failures == 0 && elapsed < Duration::from_secs(10),
        format!("1000 cases, {failures} mismatches, {elapsed:.2?} (limit 10 s)"),
    )
}

/// Largest relative deviation between analytic and central-difference
/// gradients of `f` at `x`.
fn fd_worst(x: &[f64], analytic: &[f64], f: impl Fn(&[f64]) -> f64) -> f64 {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    worst
}

fn random_batch(rng: &mut RandomSource, languages: &[Language], within: bool) -> EncodedBatch {
    let d = 3;
    let mut batch = EncodedBatch::default();
    let word = |batch: &mut EncodedBatch, rng: &mut RandomSource, lang: &Language| {
        let t = rng.random_range(1..=4);
        let rows = random_rows(rng, t, d);
        batch.words.push(BatchWord {
            frames: FrameSequence::from_frames(&rows, format!("w{}", batch.words.len())).unwrap(),
            language: lang.clone(),
        });
        batch.words.len() - 1
    };
    for _ in 0..2 {
        let mut anchor = Anchor::default();
        batch.images.push(PixelGrid::new(random_rows(rng, 4, d).concat(), d, 2, 2).unwrap());
        anchor.image = batch.images.len() - 1;
        for lang in languages {
            anchor.words.insert(lang.clone(), word(&mut batch, rng, lang));
            if within {
                anchor.alt_words.insert(lang.clone(), word(&mut batch, rng, lang));
            }
            let negs = (0..2).map(|_| word(&mut batch, rng, lang)).collect();
            anchor.neg_words.insert(lang.clone(), negs);
        }
        for _ in 0..2 {
            batch.images.push(PixelGrid::new(random_rows(rng, 4, d).concat(), d, 2, 2).unwrap());
            anchor.neg_images.push(batch.images.len() - 1);
        }
        batch.anchors.push(anchor);
    }
    batch
}

fn flatten(batch: &EncodedBatch) -> Vec<f64> {
    let mut out: Vec<f64> = batch.words.iter().flat_map(|w| w.frames.as_slice().to_vec()).collect();
    out.extend(batch.images.iter().flat_map(|g| g.as_slice().to_vec()));
    out
}

fn rebuild(template: &EncodedBatch, flat: &[f64]) -> EncodedBatch {
    let mut out = template.clone();
    let mut at = 0;
    for w in &mut out.words {
        let n = w.frames.as_slice().len();
        w.frames = FrameSequence::new(flat[at..at + n].to_vec(), w.frames.dim(), w.frames.source_id()).unwrap();
        at += n;
    }
    for g in &mut out.images {
        let n = g.as_slice().len();
        *g = PixelGrid::new(flat[at..at + n].to_vec(), g.dim(), g.height(), g.width()).unwrap();
        at += n;
    }
    out
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let tol = 1e-4;
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |name, w: f64| {
        let e = worst.entry(name).or_insert(0.0);
        *e = e.max(w);
    };
    let heads = [SimilarityHead::MaxMatchmap, SimilarityHead::ContextCosine, SimilarityHead::WordToImage];
    let trilingual = [Language::english(), Language::new("dutch"), Language::new("french")];

    for seed in 0..100 {
        let mut rng = RandomSource::new(seed);

        let v = random_rows(&mut rng, 3, 4);
        let emb = |s: &[f64]| Embedding::new(s.to_vec()).unwrap();
        let x: Vec<f64> = v.concat();
        let margin = 1.0;
        let g = losses::triplet_loss_grad(&emb(&v[0]), &emb(&v[1]), &emb(&v[2]), margin).unwrap();
        let analytic = [g.d_anchor, g.d_pair, g.d_neg].concat();
        note(
            "triplet",
            fd_worst(&x, &analytic, |p| {
                losses::triplet_loss(&emb(&p[0..4]), &emb(&p[4..8]), &emb(&p[8..12]), margin).unwrap()
            }),
        );

        let (na, nb) = (rng.random_range(0..4), rng.random_range(0..4));
        let s: Vec<f64> = (0..1 + na + nb).map(|_| rng.random_range(-3.0..3.0)).collect();
        let g = losses::infonce_pair_grad(s[0], &s[1..1 + na], &s[1 + na..]).unwrap();
        let analytic = [vec![g.d_pos], g.d_neg_a, g.d_neg_b].concat();
        note(
            "infonce_pair",
            fd_worst(&s, &analytic, |p| losses::infonce_pair(p[0], &p[1..1 + na], &p[1 + na..]).unwrap()),
        );

        let b = rng.random_range(2..=5);
        let sim = random_rows(&mut rng, b, b);
        let (_, grad) = losses::hinge_retrieval_loss_grad(&sim).unwrap();
        note(
            "hinge_retrieval_loss",
            fd_worst(&sim.concat(), &grad.concat(), |p| {
                let rows: Vec<Vec<f64>> = p.chunks(b).map(<[f64]>::to_vec).collect();
                losses::hinge_retrieval_loss(&rows).unwrap()
            }),
        );

        let head = heads[seed as usize % 3];
        for (name, langs, cfg) in [
            ("multimodal_objective (monolingual)", &trilingual[..1], LossConfig::default()),
            (
                "multimodal_objective (trilingual)",
                &trilingual[..],
                LossConfig { within_language: true, ..LossConfig::cross_lingual(LossConfig::all_pairs(&trilingual)) },
            ),
        ] {
            let batch = random_batch(&mut rng, langs, cfg.within_language);
            let out = losses::multimodal_objective(&batch, head, &cfg).unwrap();
            let analytic = [out.word_grads.concat(), out.image_grads.concat()].concat();
            note(
                name,
                fd_worst(&flatten(&batch), &analytic, |p| {
                    losses::multimodal_objective(&rebuild(&batch, p), head, &cfg).unwrap().loss
                }),
            );
        }
    }
    let elapsed = start.elapsed();
    let pass = worst.values().all(|w| *w <= tol) && elapsed < Duration::from_secs(60);
    let detail = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect::<Vec<_>>().join(", ");
    outcome(pass, format!("100 batches each, worst relative error: {detail}; {elapsed:.2?} (limit 60 s)"))
}

fn criterion_3() -> Outcome {
    let mut rng = RandomSource::new(3);
    let mut zero_ok = true;
    let mut uniform_err: f64 = 0.0;
    let mut shift_err: f64 = 0.0;
    for _ in 0..200 {
        let s = rng.random_range(-5.0..5.0);
        zero_ok &= losses::infonce_pair(s, &[], &[]).unwrap() == 0.0;

        let n = rng.random_range(1..10);
        let u = vec![s; n];
        let want = 2.0 * (1.0 + n as f64).ln();
        uniform_err = uniform_err.max((losses::infonce_pair(s, &u, &u).unwrap() - want).abs());

        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..rng.random_range(0..10)).map(|_| rng.random_range(-5.0..5.0)).collect();
        let c = rng.random_range(-50.0..50.0);
        let base = losses::infonce_pair(s, &a, &b).unwrap();
        let shift = |v: &[f64]| v.iter().map(|x| x + c).collect::<Vec<_>>();
        let moved = losses::infonce_pair(s + c, &shift(&a), &shift(&b)).unwrap();
        shift_err = shift_err.max((base - moved).abs());
    }
    outcome(
        zero_ok && uniform_err <= 1e-9 && shift_err <= 1e-9,
        format!(
            "n_neg=0 exact: {zero_ok}, uniform max error {uniform_err:.1e}, shift max error {shift_err:.1e} (limit 1e-9)"
        ),
    )
}

fn oracle_qbe(query: &[Vec<f64>], utt: &[Vec<f64>]) -> (usize, f64) {
    let unit = |v: &Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    let mut best = (0, f64::NEG_INFINITY);
    for start in 0..=utt.len() - query.len() {
        let mut total = 0.0;
        for (i, q) in query.iter().enumerate() {
            let (a, b) = (unit(q), unit(&utt[start + i]));
            total += a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>();
        }
        let score = total / query.len() as f64;
        if score > best.1 {
            best = (start, score);
        }
    }
    best
}

fn criterion_4() -> Outcome {
    let mut precisions = Vec::new();
    for seed in 0..3 {
        let cfg = GeneratorConfig { noise: 0.0, orthogonal_prototypes: true, ..pipeline::desk_generator() };
        let d = generate_dataset(&cfg, seed).unwrap();
        let en = Language::english();
        let fam = d.classes_with(Familiarity::Familiar);
        let support = pipeline::support_set(&d, &fam, 5, &en, &mut RandomSource::new(seed)).unwrap();
        let (_, report) = pipeline::mine_dataset(&d, &support, 50, &en).unwrap();
        precisions.push((report.audio_precision.aggregate, report.image_precision.aggregate));
    }
    let exact = precisions.iter().all(|&(a, i)| a == 1.0 && i == 1.0);

    let mut rng = RandomSource::new(4);
    let mut mismatches = 0;
    for case in 0..1000 {
        let d = rng.random_range(2..=6);
        let t = rng.random_range(1..=20);
        let tq = rng.random_range(1..=t);
        let utt = random_rows(&mut rng, t, d);
        let query = random_rows(&mut rng, tq, d);
        let m = qbe_match(
            &FrameSequence::from_frames(&query, "q").unwrap(),
            &FrameSequence::from_frames(&utt, format!("u{case}")).unwrap(),
        )
        .unwrap();
        let (start, score) = oracle_qbe(&query, &utt);
        if m.start_frame != start || m.end_frame != start + tq - 1 || !rel_close(m.score, score, 1e-9) {
            mismatches += 1;
        }
    }
    outcome(
        exact && mismatches == 0,
        format!("zero-noise precision (audio, image) per seed {precisions:?}; qbe_match vs window scan: {mismatches}/1000 mismatches"),
    )
}

struct DeskRun {
    dataset: Dataset,
    run: PipelineRun,
    classification: EvalReport,
    vpkl: VpklReport,
    elapsed: Duration,
}

/// Generate, mine, pretrain, fine-tune and evaluate on one worker thread.
fn desk_run() -> DeskRun {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| {
        let start = Instant::now();
        let dataset = generate_dataset(&pipeline::desk_generator(), 0).unwrap();
        let run = pipeline::run_pipeline(&dataset, &PipelineConfig::default()).unwrap();
        let model = run.model();
        let en = Language::english();
        let fam = dataset.classes_with(Familiarity::Familiar);
        let queries = pipeline::word_queries(&dataset, &fam, Split::Test, &en);
        let images = pipeline::images_by_class(&dataset, &fam, Split::Test);
        let classification =
            classification_report(&WordToImage(model), &queries, &images, &mut RandomSource::new(0).fork("matching"))
                .unwrap();
        let tau = 0.5;
        let dev = vpkl_scores(
            model,
            &pipeline::image_queries(&dataset, &fam, Split::Dev, 3),
            &pipeline::utterance_refs(&dataset, Split::Dev, &en),
            tau,
        )
        .unwrap();
        let theta = select_theta(&dev).unwrap();
        let vpkl = vpkl_scores(
            model,
            &pipeline::image_queries(&dataset, &fam, Split::Test, 3),
            &pipeline::utterance_refs(&dataset, Split::Test, &en),
            tau,
        )
        .unwrap()
        .report(theta)
        .unwrap();
        DeskRun { dataset, run, classification, vpkl, elapsed: start.elapsed() }
    })
}

fn criterion_5(desk: &DeskRun) -> Outcome {
    let (acc, f1, loc) = (desk.classification.aggregate, desk.vpkl.f1, desk.vpkl.localisation_accuracy);
    let mining = desk.run.mining.as_ref().unwrap();
    outcome(
        acc >= 0.95 && f1 >= 0.95 && loc >= 0.9 && desk.elapsed < Duration::from_secs(300),
        format!(
            "classification {:.1}% (>= 95), VPKL F1 {f1:.3} (>= 0.95), localisation {loc:.3} (>= 0.9), \
             mining precision {:.2}/{:.2}, {:.1?} on one thread (limit 5 min)",
            100.0 * acc,
            mining.audio_precision.aggregate,
            mining.image_precision.aggregate,
            desk.elapsed
        ),
    )
}

fn criterion_6(desk: &DeskRun) -> Outcome {
    let calib = generate_dataset(&GeneratorConfig::default(), 0).unwrap();
    let en = Language::english();
    let fam = calib.classes_with(Familiarity::Familiar);
    let oracle = PrototypeOracle::new(calib.prototypes.as_ref().unwrap(), &fam).unwrap();
    let root = RandomSource::new(0);
    let acc = |s: &dyn Scorer, d: &Dataset, v: MeVariant, n: usize| {
        let trials = me_build_trials(d, v, n, &en, &mut root.fork(v.as_str())).unwrap();
        me_accuracy(s, &trials, 0).unwrap().aggregate
    };
    let ff = acc(&oracle, &calib, MeVariant::FamiliarFamiliar, 2000);
    let ufn = acc(&oracle, &calib, MeVariant::UnderlineFamiliarNovel, 2000);
    let nn = acc(&ExchangeableScorer::new(0), &calib, MeVariant::NovelNovel, 10_000);
    let trained = acc(&WordToImage(desk.run.model()), &desk.dataset, MeVariant::FamiliarNovel, 2000);
    outcome(
        ff == 1.0 && ufn == 1.0 && (nn - 0.5).abs() <= 0.015 && trained > 0.55,
        format!(
            "oracle familiar_familiar {:.1}%, underline_familiar_novel {:.1}% (both 100); \
             random novel_novel {:.2}% (50 +- 1.5); trained familiar_novel {:.2}% (> 55)",
            100.0 * ff,
            100.0 * ufn,
            100.0 * nn,
            100.0 * trained
        ),
    )
}

fn criterion_7(desk: &DeskRun) -> Outcome {
    let en = Language::english();
    let d = &desk.dataset;
    let fam = d.classes_with(Familiarity::Familiar);
    let oracle = PrototypeOracle::new(d.prototypes.as_ref().unwrap(), &fam).unwrap();
    let trained = WordToImage(desk.run.model());
    let random = ExchangeableScorer::new(7);
    let scorers: [(&str, &dyn Scorer); 3] = [("oracle", &oracle), ("trained", &trained), ("random", &random)];
    let mut changed = Vec::new();
    for v in MeVariant::ALL {
        let trials = me_build_trials(d, v, 1000, &en, &mut RandomSource::new(7).fork(v.as_str())).unwrap();
        let swapped: Vec<TrialSpec> = trials.iter().map(TrialSpec::swapped).collect();
        for (name, s) in scorers {
            let (a, b) = (me_accuracy(s, &trials, 0).unwrap(), me_accuracy(s, &swapped, 0).unwrap());
            if a.aggregate != b.aggregate || a.per_class != b.per_class {
                changed.push(format!("{name}/{}", v.as_str()));
            }
        }
    }

    let queries = pipeline::word_queries(d, &fam, Split::Test, &en);
    let pool: Vec<(ClassId, &PixelGrid)> = pipeline::images_by_class(d, &fam, Split::Test)
        .into_iter()
        .flat_map(|(c, v)| v.into_iter().map(move |g| (c, g)))
        .collect();
    let report = retrieval_report(&oracle, &queries, &pool, 0).unwrap();
    let mut below = 0;
    for (class, q) in &queries {
        let in_class = pool.iter().filter(|(c, _)| c == class).count();
        for n in 1..=in_class {
            below += usize::from(vgs_core::eval::few_shot_retrieval(&oracle, q, *class, &pool, n).unwrap() != 1.0);
        }
    }
    outcome(
        changed.is_empty() && report.aggregate == 1.0 && below == 0,
        format!(
            "swap changed {} of 15 (variant, scorer) accuracies; oracle P@N {:.1}% over {} queries, {below} cutoffs below 100%",
            changed.len(),
            100.0 * report.aggregate,
            queries.len()
        ),
    )
}

fn files_under(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn criterion_8(desk: &DeskRun) -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut checks = Vec::new();

    let (a, b) = (tmp.path().join("data_a"), tmp.path().join("data_b"));
    for dir in [&a, &b] {
        std::fs::create_dir_all(dir).unwrap();
        generate_dataset(&pipeline::desk_generator(), 0).unwrap().save(dir).unwrap();
    }
    let (fa, fb) = (files_under(&a), files_under(&b));
    checks.push(("dataset files", !fa.is_empty() && fa == fb));

    let again = desk_run();
    let mut ckpt_equal = desk.run.checkpoints.len() == again.run.checkpoints.len();
    for (i, (x, y)) in desk.run.checkpoints.iter().zip(&again.run.checkpoints).enumerate() {
        let (px, py) = (tmp.path().join(format!("x{i}.mmt")), tmp.path().join(format!("y{i}.mmt")));
        save_checkpoint(&px, x).unwrap();
        save_checkpoint(&py, y).unwrap();
        ckpt_equal &= std::fs::read(&px).unwrap() == std::fs::read(&py).unwrap();
        ckpt_equal &=
            std::fs::read(px.with_extension("json")).unwrap() == std::fs::read(py.with_extension("json")).unwrap();
    }
    checks.push(("checkpoints", ckpt_equal));
    let json = |r: &DeskRun| {
        (
            to_canonical_json(&r.classification).unwrap(),
            to_canonical_json(&r.vpkl.to_eval_report(0)).unwrap(),
            to_canonical_json(r.run.mining.as_ref().unwrap()).unwrap(),
        )
    };
    checks.push(("JSON reports", json(desk) == json(&again)));

    let mut rng = RandomSource::new(8);
    let values: Vec<f32> = (0..60).map(|_| f32::from_bits(rng.random::<u32>() & 0xbf7f_ffff)).collect();
    let tensor = Tensor::new(vec![3, 4, 5], values.clone()).unwrap();
    let path = tmp.path().join("round.mmt");
    write_tensor(&path, &tensor).unwrap();
    let back = read_tensor(&path).unwrap();
    let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    checks.push(("tensor round trip", back.dims() == [3, 4, 5] && bits(back.data()) == bits(&values)));

    let golden = read_tensor(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden_2x3.mmt")).unwrap();
    let want: [u32; 6] = [0x0000_0000, 0xbfc0_0000, 0x4050_0000, 0x3a83_126f, 0x477f_e000, 0x8000_0000];
    checks.push(("golden fixture", golden.dims() == [2, 3] && bits(golden.data()) == want));

    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    outcome(
        failed.is_empty(),
        if failed.is_empty() {
            format!("identical across repeated runs: {}", checks.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", "))
        } else {
            format!("differs: {}", failed.join(", "))
        },
    )
}

fn main() {
    let mut results = vec![
        ("matchmap oracle equivalence", criterion_1()),
        ("gradient checks", criterion_2()),
        ("InfoNCE closed forms", criterion_3()),
        ("mining oracle", criterion_4()),
    ];
    let desk = desk_run();
    results.push(("end-to-end desk run", criterion_5(&desk)));
    results.push(("ME harness calibration", criterion_6(&desk)));
    results.push(("trial-construction invariance", criterion_7(&desk)));
    results.push(("determinism and formats", criterion_8(&desk)));

    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        println!("criterion {}: {} {name}: {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
