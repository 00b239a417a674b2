use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use serde_json::json;
use vgs_core::attention::{max_pool_frames, word_to_image_similarity};
use vgs_core::data::synth::item_counts;
use vgs_core::data::{generate_dataset, load_manifest, validate_dataset};
use vgs_core::eval::{
    classification_report, me_accuracy, me_build_trials, me_table, retrieval_report, select_theta, vpkl_scores,
};
use vgs_core::pipeline::{self, MiningReport, PipelineConfig};
use vgs_core::train::{load_checkpoint, save_checkpoint};
use vgs_core::{
    ClassId, Dataset, Embedder, Error, EvalReport, ExchangeableScorer, Familiarity, GeneratorConfig, Language,
    MeVariant, Model, PrototypeOracle, RandomSource, Scorer, Split, WordToImage,
};

use crate::heatmap;
use crate::output::{
    ensure_dir, out_dir, report_json, to_value, write_report, write_text, CliError, CliResult, RunInfo,
};
use crate::{
    Builtin, Command, DataArgs, EvalFewshotArgs, EvalVpklArgs, GenerateArgs, MeTestArgs, MineArgs, ModelArgs,
    PlotAttentionArgs, Preset, TrainArgs, ValidateArgs, VariantChoice,
};

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::GenerateData(a) => generate(a),
        Command::Validate(a) => validate(a),
        Command::Mine(a) => mine(a),
        Command::Train(a) => train(a),
        Command::EvalFewshot(a) => eval_fewshot(a),
        Command::EvalVpkl(a) => eval_vpkl(a),
        Command::MeTest(a) => me_test(a),
        Command::PlotAttention(a) => plot_attention(a),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn load_dataset(args: &DataArgs) -> CliResult<(Dataset, Language)> {
    let dataset = Dataset::load(&args.data)?;
    let language = Language::new(args.language.clone());
    if !dataset.languages().contains(&language) {
        return Err(CliError::config(format!("dataset has no items in language `{language}`")));
    }
    Ok((dataset, language))
}

/// The model a scoring command runs, with what identifies it in reports.
enum Loaded {
    Trained { label: String, checksum: String, model: Model },
    Oracle(PrototypeOracle),
    Random(ExchangeableScorer),
}

impl Loaded {
    fn new(args: &ModelArgs, dataset: &Dataset, seed: u64) -> CliResult<Self> {
        if let Some(path) = &args.checkpoint {
            let ckpt = load_checkpoint(path)?;
            let label = path.file_stem().map_or_else(|| "checkpoint".into(), |s| s.to_string_lossy().into_owned());
            return Ok(Loaded::Trained { label, checksum: ckpt.model.checksum(), model: ckpt.model });
        }
        Ok(match args.model {
            Builtin::Random => Loaded::Random(ExchangeableScorer::new(seed)),
            Builtin::Oracle => {
                let prototypes = dataset
                    .prototypes
                    .as_ref()
                    .ok_or_else(|| CliError::config("the oracle model needs a dataset with prototype files"))?;
                Loaded::Oracle(PrototypeOracle::new(prototypes, &dataset.classes_with(Familiarity::Familiar))?)
            }
        })
    }

    fn label(&self) -> String {
        match self {
            Loaded::Trained { label, .. } => label.clone(),
            Loaded::Oracle(_) => "oracle".into(),
            Loaded::Random(_) => "random".into(),
        }
    }

    fn describe(&self) -> serde_json::Value {
        match self {
            Loaded::Trained { checksum, model, .. } => {
                json!({ "kind": "checkpoint", "params_sha256": checksum, "head": model.head_kind().as_str() })
            }
            Loaded::Oracle(_) => json!({ "kind": "oracle" }),
            Loaded::Random(_) => json!({ "kind": "random" }),
        }
    }

    /// Word-image scorer; trained models score through the word-to-image head.
    fn scorer(&self) -> Box<dyn Scorer + '_> {
        match self {
            Loaded::Trained { model, .. } => Box::new(WordToImage(model)),
            Loaded::Oracle(o) => Box::new(WordToImage(o)),
            Loaded::Random(r) => Box::new(*r),
        }
    }

    fn embedder(&self, command: &str) -> CliResult<&dyn Embedder> {
        match self {
            Loaded::Trained { model, .. } => Ok(model),
            Loaded::Oracle(o) => Ok(o),
            Loaded::Random(_) => Err(CliError::config(format!(
                "{command} needs an embedding model: pass --checkpoint or --model oracle"
            ))),
        }
    }
}

fn classes_table(dataset: &Dataset, columns: &[&str], rows: &BTreeMap<ClassId, Vec<f64>>, total: &[f64]) -> String {
    let names: BTreeMap<ClassId, String> = rows.keys().map(|c| (*c, dataset.class_name(*c))).collect();
    let width = names.values().map(String::len).max().unwrap_or(0).max("class".len());
    let mut out = format!("{:<width$}", "class");
    for c in columns {
        let _ = write!(out, "  {c:>12}");
    }
    out.push('\n');
    let mut line = |name: &str, values: &[f64]| {
        let _ = write!(out, "{name:<width$}");
        for v in values {
            let _ = write!(out, "  {:>12.2}", 100.0 * v);
        }
        out.push('\n');
    };
    for (c, values) in rows {
        line(&names[c], values);
    }
    line("all", total);
    out
}

fn generate(args: GenerateArgs) -> CliResult<()> {
    let cfg: GeneratorConfig = match (&args.config, args.preset) {
        (Some(path), _) => read_json(path)?,
        (None, Preset::Default) => GeneratorConfig::default(),
        (None, Preset::Desk) => pipeline::desk_generator(),
    };
    let dir = out_dir(args.out.out.as_deref());
    let run = RunInfo::new("generate-data", args.seed, json!({ "generator": to_value(&cfg)? }))?;
    let dataset = generate_dataset(&cfg, args.seed)?;
    dataset.save(&dir)?;
    let counts = item_counts(&dataset);
    write_report(&dir, "generation_report.json", &run, &json!({ "items": counts }))?;
    println!("wrote {} items to {}", dataset.items.len(), dir.display());
    Ok(())
}

fn validate(args: ValidateArgs) -> CliResult<()> {
    let manifest = load_manifest(&args.dir)?;
    let report = validate_dataset(&manifest, &args.dir);
    let run = RunInfo::new("validate", manifest.seed, json!({ "manifest": to_value(&manifest)? }))?;
    let text = report_json(&run, &report)?;
    if let Some(dir) = &args.out {
        write_text(dir, "validation_report.json", &text)?;
    }
    println!("{text}");
    if report.is_valid() {
        Ok(())
    } else {
        for v in report.violations.iter().take(20) {
            eprintln!("{:?} {}: {}", v.kind, v.item.as_deref().unwrap_or("-"), v.detail);
        }
        Err(CliError::config(format!(
            "{} violation(s) in {} item(s) checked",
            report.violations.len(),
            report.items_checked
        )))
    }
}

#[derive(Serialize)]
struct MinedPairRecord<'a> {
    rank: usize,
    utterance_id: &'a str,
    start_frame: usize,
    end_frame: usize,
    segment_score: f64,
    image_id: &'a str,
    image_score: f64,
}

fn warn_shortages(report: &MiningReport) {
    for (what, list) in [("audio segments", &report.audio_shortages), ("images", &report.image_shortages)] {
        for s in list {
            eprintln!("warning: class {}: only {} of {} requested {what} available", s.class, s.available, s.requested);
        }
    }
}

fn mine(args: MineArgs) -> CliResult<()> {
    let (dataset, language) = load_dataset(&args.data)?;
    let run = RunInfo::new(
        "mine",
        args.seed,
        json!({ "data": args.data.data, "language": language, "k": args.k, "n": args.n, "dataset_seed": dataset.manifest.seed }),
    )?;
    let familiar = dataset.classes_with(Familiarity::Familiar);
    let support = pipeline::support_set(
        &dataset,
        &familiar,
        args.k,
        &language,
        &mut RandomSource::new(args.seed).fork("support"),
    )?;
    let (mined, report) = pipeline::mine_dataset(&dataset, &support, args.n, &language)?;
    warn_shortages(&report);
    let pairs: BTreeMap<ClassId, Vec<MinedPairRecord>> = mined
        .per_class
        .iter()
        .map(|(c, v)| {
            let records = v
                .iter()
                .enumerate()
                .map(|(rank, p)| MinedPairRecord {
                    rank,
                    utterance_id: &p.segment.utterance_id,
                    start_frame: p.segment.start_frame,
                    end_frame: p.segment.end_frame,
                    segment_score: p.segment.score,
                    image_id: &p.image.image_id,
                    image_score: p.image.score,
                })
                .collect();
            (*c, records)
        })
        .collect();
    let dir = out_dir(args.out.out.as_deref());
    write_report(&dir, "mining_report.json", &run, &report)?;
    write_report(&dir, "mined_pairs.json", &run, &pairs)?;
    println!(
        "audio precision {:.4}, image precision {:.4}, {} pairs; wrote {}",
        report.audio_precision.aggregate,
        report.image_precision.aggregate,
        report.pairs.values().sum::<usize>(),
        dir.display()
    );
    Ok(())
}

fn train(args: TrainArgs) -> CliResult<()> {
    let mut cfg: PipelineConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.ground_truth |= args.ground_truth;
    let dataset = Dataset::load(&args.data)?;
    let run = RunInfo::new(
        "train",
        cfg.seed,
        json!({ "data": args.data, "dataset_seed": dataset.manifest.seed, "pipeline": to_value(&cfg)? }),
    )?;
    let dir = out_dir(args.out.out.as_deref());
    let result = match pipeline::run_pipeline(&dataset, &cfg) {
        Ok(r) => r,
        Err(Error::Diverged { reason, checkpoint }) => {
            ensure_dir(&dir)?;
            let path = dir.join("diverged.mmt");
            save_checkpoint(&path, &checkpoint)?;
            return Err(CliError::config(format!(
                "training diverged: {reason}; last good state in {}",
                path.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(report) = &result.mining {
        warn_shortages(report);
    }
    let ckpt_dir = dir.join("checkpoints");
    ensure_dir(&ckpt_dir)?;
    let mut stages = Vec::new();
    for (i, c) in result.checkpoints.iter().enumerate() {
        let name = format!("{i:02}_{}.mmt", c.stage.as_str());
        save_checkpoint(&ckpt_dir.join(&name), c)?;
        stages.push(json!({
            "stage": c.stage.as_str(),
            "checkpoint": format!("checkpoints/{name}"),
            "epochs": c.epoch,
            "loss_trace": c.loss_trace,
            "params_sha256": c.model.checksum(),
        }));
    }
    let last = result.checkpoints.last().expect("pipeline keeps the untrained checkpoint");
    let model_path = dir.join("model.mmt");
    save_checkpoint(&model_path, last)?;
    let support: BTreeMap<ClassId, usize> = result.support.iter().map(|(c, p)| (c, p.len())).collect();
    write_report(
        &dir,
        "train_report.json",
        &run,
        &json!({ "stages": stages, "support": support, "mining": result.mining }),
    )?;
    for c in &result.checkpoints {
        match (c.loss_trace.first(), c.loss_trace.last()) {
            (Some(a), Some(b)) => println!("{:<14} loss {a:.4} -> {b:.4} over {} epochs", c.stage.as_str(), c.epoch),
            _ => println!("{:<14} (no epochs)", c.stage.as_str()),
        }
    }
    println!("wrote {}", model_path.display());
    Ok(())
}

fn eval_fewshot(args: EvalFewshotArgs) -> CliResult<()> {
    let (dataset, language) = load_dataset(&args.data)?;
    let model = Loaded::new(&args.model, &dataset, args.seed)?;
    let run = RunInfo::new(
        "eval-fewshot",
        args.seed,
        json!({ "data": args.data.data, "language": language, "model": model.describe(), "dataset_seed": dataset.manifest.seed }),
    )?;
    let familiar = dataset.classes_with(Familiarity::Familiar);
    let queries = pipeline::word_queries(&dataset, &familiar, Split::Test, &language);
    let images = pipeline::images_by_class(&dataset, &familiar, Split::Test);
    let scorer = model.scorer();
    let root = RandomSource::new(args.seed);
    let classification = classification_report(scorer.as_ref(), &queries, &images, &mut root.fork("matching"))?;
    let pool: Vec<_> = images.iter().flat_map(|(c, v)| v.iter().map(move |g| (*c, *g))).collect();
    let retrieval = retrieval_report(scorer.as_ref(), &queries, &pool, args.seed)?;

    let rows: BTreeMap<ClassId, Vec<f64>> = classification
        .per_class
        .iter()
        .map(|(c, acc)| (*c, vec![*acc, retrieval.per_class.get(c).copied().unwrap_or(0.0)]))
        .collect();
    let table = classes_table(&dataset, &["accuracy", "P@N"], &rows, &[classification.aggregate, retrieval.aggregate]);
    let dir = out_dir(args.out.out.as_deref());
    write_report(
        &dir,
        "fewshot_report.json",
        &run,
        &json!({ "classification": classification, "retrieval": retrieval }),
    )?;
    write_text(&dir, "fewshot_table.txt", &table)?;
    print!("{table}");
    Ok(())
}

fn eval_vpkl(args: EvalVpklArgs) -> CliResult<()> {
    if !(args.tau > 0.0 && args.tau <= 1.0) {
        return Err(CliError::config(format!("--tau {} is outside (0, 1]", args.tau)));
    }
    let (dataset, language) = load_dataset(&args.data)?;
    let model = Loaded::new(&args.model, &dataset, args.seed)?;
    let embedder = model.embedder("eval-vpkl")?;
    let run = RunInfo::new(
        "eval-vpkl",
        args.seed,
        json!({
            "data": args.data.data, "language": language, "model": model.describe(), "tau": args.tau,
            "theta": args.theta, "queries_per_class": args.queries_per_class, "dataset_seed": dataset.manifest.seed,
        }),
    )?;
    let familiar = dataset.classes_with(Familiarity::Familiar);
    let scores = |split: Split| {
        vpkl_scores(
            embedder,
            &pipeline::image_queries(&dataset, &familiar, split, args.queries_per_class),
            &pipeline::utterance_refs(&dataset, split, &language),
            args.tau,
        )
    };
    let (theta, theta_source) = match args.theta {
        Some(t) => (t, "flag"),
        None => (select_theta(&scores(Split::Dev)?)?, "dev"),
    };
    let report = scores(Split::Test)?.report(theta)?;
    let rows: BTreeMap<ClassId, Vec<f64>> = report.per_class_f1.iter().map(|(c, f)| (*c, vec![*f])).collect();
    let mut table = classes_table(&dataset, &["F1"], &rows, &[report.f1]);
    let _ = writeln!(
        table,
        "theta {theta:.6} ({theta_source}), precision {:.2}, recall {:.2}, localisation accuracy {:.2}, localisation precision {:.2}",
        100.0 * report.precision,
        100.0 * report.recall,
        100.0 * report.localisation_accuracy,
        100.0 * report.localisation_precision
    );
    let dir = out_dir(args.out.out.as_deref());
    write_report(
        &dir,
        "vpkl_report.json",
        &run,
        &json!({ "theta_source": theta_source, "report": report, "summary": report.to_eval_report(args.seed) }),
    )?;
    write_text(&dir, "vpkl_table.txt", &table)?;
    print!("{table}");
    Ok(())
}

fn me_test(args: MeTestArgs) -> CliResult<()> {
    if args.trials == 0 {
        return Err(CliError::config("--trials must be at least 1"));
    }
    let (dataset, source) = match &args.data {
        Some(dir) => (Dataset::load(dir)?, json!({ "data": dir })),
        None => (
            generate_dataset(&GeneratorConfig::default(), args.seed)?,
            json!({ "generated": to_value(&GeneratorConfig::default())? }),
        ),
    };
    let language = Language::new(args.language.clone());
    let model = Loaded::new(&args.model, &dataset, args.seed)?;
    let variants: Vec<MeVariant> = match args.variant {
        VariantChoice::One(v) => vec![v],
        VariantChoice::All => MeVariant::ALL.to_vec(),
    };
    let run = RunInfo::new(
        "me-test",
        args.seed,
        json!({
            "dataset": source, "language": language, "model": model.describe(), "trials": args.trials,
            "variants": variants.iter().map(|v| v.as_str()).collect::<Vec<_>>(), "dataset_seed": dataset.manifest.seed,
        }),
    )?;
    let scorer = model.scorer();
    let root = RandomSource::new(args.seed);
    let mut reports: BTreeMap<&str, EvalReport> = BTreeMap::new();
    let mut row = BTreeMap::new();
    for v in variants {
        let trials = me_build_trials(&dataset, v, args.trials, &language, &mut root.fork(v.as_str()))?;
        let report = me_accuracy(scorer.as_ref(), &trials, args.seed)?;
        row.insert(v, report.aggregate);
        reports.insert(v.as_str(), report);
    }
    let table = me_table(&[(model.label(), row)]);
    let dir = out_dir(args.out.out.as_deref());
    write_report(&dir, "me_report.json", &run, &reports)?;
    write_text(&dir, "me_table.txt", &table)?;
    print!("{table}");
    Ok(())
}

fn file_safe(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

fn plot_attention(args: PlotAttentionArgs) -> CliResult<()> {
    let (dataset, language) = load_dataset(&args.data)?;
    let model = Loaded::new(&args.model, &dataset, dataset.manifest.seed)?;
    let embedder = model.embedder("plot-attention")?;
    let split = Split::from(args.split);
    let pairs: Vec<(String, String)> = match (&args.word, &args.image) {
        (Some(w), Some(i)) => vec![(w.clone(), i.clone())],
        _ => {
            // The i-th pair takes the (i / C)-th word and image of familiar class i mod C.
            let familiar = dataset.classes_with(Familiarity::Familiar);
            let mut out = Vec::new();
            for i in 0..args.pairs {
                let Some(&class) = familiar.get(i % familiar.len().max(1)) else { break };
                let j = i / familiar.len();
                let word = dataset.words(split, &language).filter(|w| w.class == Some(class)).nth(j);
                let image = dataset.images(split).filter(|g| g.class == Some(class)).nth(j);
                if let (Some(w), Some(g)) = (word, image) {
                    out.push((w.id.clone(), g.id.clone()));
                }
            }
            out
        }
    };
    if pairs.is_empty() {
        return Err(CliError::config(format!("no familiar word-image pairs in the {} split", split.as_str())));
    }
    let run = RunInfo::new(
        "plot-attention",
        dataset.manifest.seed,
        json!({ "data": args.data.data, "language": language, "model": model.describe(), "split": split.as_str(), "pairs": pairs }),
    )?;
    let dir = out_dir(args.out.out.as_deref());
    ensure_dir(&dir)?;
    let mut records = Vec::new();
    for (i, (word_id, image_id)) in pairs.iter().enumerate() {
        let lookup = |id: &str, want: &str, ok: fn(&vgs_core::LabeledItem) -> bool| {
            dataset
                .item(id)
                .filter(|it| ok(it))
                .ok_or_else(|| CliError::config(format!("no {want} item `{id}` in the dataset")))
        };
        let word = lookup(word_id, "word", |it| it.is_word())?;
        let image = lookup(image_id, "image", |it| it.is_image())?;
        let (frames, grid) = (word.frames().expect("word"), image.grid().expect("image"));
        let pooled = max_pool_frames(&embedder.embed_frames(frames)?);
        let attention = word_to_image_similarity(&pooled, &embedder.embed_grid(grid)?)?;
        let name = format!("attention_{i:02}_{}_{}.png", file_safe(word_id), file_safe(image_id));
        heatmap::write_png(&dir.join(&name), grid, &attention.per_cell)?;
        records.push(json!({
            "word": word_id, "image": image_id, "word_class": word.class, "image_class": image.class,
            "score": attention.score, "per_cell": attention.per_cell, "grid": [grid.height(), grid.width()], "png": name,
        }));
        println!("{}", dir.join(&name).display());
    }
    write_report(&dir, "attention.json", &run, &records)?;
    Ok(())
}
