use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::bail;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use segsum::corpus::{generate_synthetic, parse_corpus, split_corpus, write_corpus, CorpusRecord};
use segsum::encoder::{Checkpoint, ModelConfig, ModelParams};
use segsum::evalseg::{
    aggregate, approx_randomization_test, boundary_proximity_histogram, histogram_csv,
    histogram_json, merge_histograms, rouge_vs_k, rouge_vs_k_csv, score_all,
};
use segsum::inference::{
    predict_with_representations, BoundarySource, InferenceConfig, Prediction,
};
use segsum::oracle::{build_labels, summary_set, SegLabelConvention};
use segsum::trainer::{fit, grad_check, TrainConfig, TrainingExample, Variant};
use segsum::{Document, Error, SynthConfig};

const DEFAULT_SEED: u64 = 7;

#[derive(Parser)]
#[command(
    name = "segsum",
    version,
    about = "Joint extractive summarization and section segmentation"
)]
struct Cli {
    /// Worker threads; 1 gives bitwise-reproducible runs.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Attach oracle summary labels and segmentation labels to a corpus.
    Label(LabelArgs),
    /// Write a synthetic corpus with planted summaries.
    Synth(SynthArgs),
    /// Train a model and write checkpoints plus a metrics log.
    Train(TrainArgs),
    /// Score a corpus with a checkpoint.
    Predict(PredictArgs),
    /// Evaluate predictions against a corpus.
    Eval(EvalArgs),
    /// Histogram of summary sentence offsets from section boundaries.
    Analyze(AnalyzeArgs),
    /// Compare analytic and finite-difference gradients on one document.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct LabelArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Output corpus file; required unless --in-place.
    #[arg(long, conflicts_with = "in_place")]
    out: Option<PathBuf>,
    /// Rewrite the input corpus.
    #[arg(long)]
    in_place: bool,
    #[arg(long, default_value = "first")]
    seg_label: SegLabelConvention,
    /// Upper bound on oracle summary size.
    #[arg(long)]
    max_sentences: Option<usize>,
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    docs: usize,
    /// Probability that a salient sentence opens or closes its section.
    #[arg(long, default_value_t = 0.9)]
    bias: f64,
    /// Probability of a near-duplicate decoy per section.
    #[arg(long, default_value_t = 0.0)]
    duplicate_rate: f64,
    #[arg(long, default_value_t = 600)]
    vocabulary: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Validation corpus; by default 10% of --corpus is held out.
    #[arg(long)]
    val: Option<PathBuf>,
    /// TOML file with training options.
    #[arg(long)]
    config: Option<PathBuf>,
    /// TOML file with the model configuration.
    #[arg(long)]
    model_config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, default_value = "first")]
    seg_label: SegLabelConvention,
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Output predictions file (JSON Lines).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Directory for the report and plot data.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Largest K for the score-vs-K curve.
    #[arg(long, default_value_t = 10)]
    k_max: usize,
    /// Second predictions file to test against (ROUGE-1 F).
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    iterations: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Use selected sentences from predictions instead of corpus labels.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Output file; JSON map unless the name ends in `.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Parameters to check at; a fresh initialization otherwise.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    model_config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    doc: usize,
    /// Leading sentences kept from the document.
    #[arg(long, default_value_t = 6)]
    max_sentences: usize,
    #[arg(long, default_value = "full")]
    variant: Variant,
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value = "first")]
    seg_label: SegLabelConvention,
}

/// Error raised for invalid flag combinations.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return 1;
    }
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_numeric() => 3,
        Some(Error::InvalidArgument(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build_global()
    {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Label(a) => label(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a),
        Command::Analyze(a) => analyze(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn read_records(path: &Path, strict: bool) -> anyhow::Result<Vec<CorpusRecord>> {
    let parsed = parse_corpus(path, strict)?;
    for (line, reason) in &parsed.skipped {
        eprintln!("warning: {}: skipped line {line}: {reason}", path.display());
    }
    Ok(parsed.records)
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    toml::from_str(&text)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())).into())
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).map_err(|e| {
        Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn create_dir(path: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(path).map_err(|e| {
        Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn label(a: LabelArgs) -> anyhow::Result<()> {
    let target = match (&a.out, a.in_place) {
        (Some(p), false) => p.clone(),
        (None, true) => a.corpus.clone(),
        _ => bail!(Usage("label needs --out PATH or --in-place".into())),
    };
    let records = read_records(&a.corpus, a.strict)?;
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let labels = build_labels(&r.document, a.max_sentences, a.seg_label)?;
        out.push(CorpusRecord {
            labels: Some(labels.to_labels()),
            document: r.document,
        });
    }
    write_corpus(&target, &out)?;
    eprintln!("labeled {} documents -> {}", out.len(), target.display());
    Ok(())
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let cfg = SynthConfig {
        n_documents: a.docs,
        salience_boundary_bias: a.bias,
        duplicate_rate: a.duplicate_rate,
        vocabulary_size: a.vocabulary,
        rng_seed: a.seed,
        ..SynthConfig::default()
    };
    let records = generate_synthetic(&cfg)?;
    write_corpus(&a.out, &records)?;
    eprintln!("wrote {} documents -> {}", records.len(), a.out.display());
    Ok(())
}

/// Everything that determines a training run, echoed next to its outputs.
#[derive(Serialize)]
struct EffectiveConfig<'a> {
    corpus: String,
    val: Option<String>,
    seg_label: SegLabelConvention,
    train: &'a TrainConfig,
    model: &'a ModelConfig,
}

fn examples(
    records: &[CorpusRecord],
    convention: SegLabelConvention,
    model: &ModelConfig,
) -> anyhow::Result<Vec<TrainingExample>> {
    Ok(records
        .iter()
        .map(|r| TrainingExample::from_record(r, convention, model))
        .collect::<segsum::Result<_>>()?)
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => read_toml(p)?,
        None => TrainConfig {
            rng_seed: DEFAULT_SEED,
            ..TrainConfig::default()
        },
    };
    if let Some(v) = a.variant {
        cfg.variant = v;
    }
    if let Some(b) = a.beta {
        cfg.beta = b;
    }
    if let Some(s) = a.seed {
        cfg.rng_seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.learning_rate {
        cfg.learning_rate = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    cfg.validate()?;
    let model: ModelConfig = match &a.model_config {
        Some(p) => read_toml(p)?,
        None => ModelConfig::default(),
    };
    model.validate()?;

    let records = read_records(&a.corpus, a.strict)?;
    let (train_recs, val_recs) = match &a.val {
        Some(p) => (records, read_records(p, a.strict)?),
        None => {
            let (tr, va, te) = split_corpus(&records, (0.8, 0.1, 0.1), cfg.rng_seed)?;
            (tr.into_iter().chain(te).collect(), va)
        }
    };
    let train_ex = examples(&train_recs, a.seg_label, &model)?;
    let val_ex = examples(&val_recs, a.seg_label, &model)?;

    create_dir(&a.out)?;
    let effective = EffectiveConfig {
        corpus: a.corpus.display().to_string(),
        val: a.val.as_ref().map(|p| p.display().to_string()),
        seg_label: a.seg_label,
        train: &cfg,
        model: &model,
    };
    write_text(&a.out.join("config.toml"), &toml::to_string(&effective)?)?;

    let init = ModelParams::init(&model, cfg.rng_seed)?;
    let out = fit(&train_ex, &val_ex, init, &cfg, a.seg_label)?;
    let mut log = String::new();
    for m in &out.log {
        log.push_str(&serde_json::to_string(m)?);
        log.push('\n');
    }
    write_text(&a.out.join("metrics.jsonl"), &log)?;
    let save = |params: ModelParams, name: &str| {
        Checkpoint {
            params,
            seg_convention: a.seg_label,
            variant: cfg.variant,
        }
        .save(a.out.join(name))
    };
    save(out.params, "checkpoint.json")?;
    save(out.best_params, "best_checkpoint.json")?;
    if out.dpp_skipped > 0 {
        eprintln!(
            "note: DPP term skipped {} times for documents without summary labels",
            out.dpp_skipped
        );
    }
    if let Some(last) = out.log.last() {
        eprintln!(
            "epoch {}: train_loss {:.4} val_loss {:.4} val_rouge1_f {:.4} val_seg_f1 {:.4}",
            last.epoch, last.train_loss, last.val_loss, last.val_rouge1_f, last.val_seg_f1
        );
    }
    Ok(())
}

fn predict(a: PredictArgs) -> anyhow::Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let cfg = InferenceConfig {
        k: a.k,
        threshold: a.threshold,
        convention: ck.seg_convention,
        boundary_source: if ck.variant == Variant::Base {
            BoundarySource::Summary
        } else {
            BoundarySource::Segmentation
        },
    };
    cfg.validate()?;
    let records = read_records(&a.corpus, a.strict)?;
    let mut out = String::new();
    for r in &records {
        let features = segsum::encoder::featurize(&r.document, &ck.params.config.features);
        let (pred, _) =
            predict_with_representations(&r.document, features.view(), &ck.params, &cfg)?;
        out.push_str(&pred.to_json_line());
        out.push('\n');
    }
    write_text(&a.out, &out)?;
    eprintln!("wrote {} predictions -> {}", records.len(), a.out.display());
    Ok(())
}

fn read_predictions(path: &Path) -> anyhow::Result<Vec<Prediction>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            Prediction::from_json_line(l).map_err(|e| match e {
                Error::MalformedLine { message, .. } => Error::MalformedLine {
                    line: i + 1,
                    message,
                }
                .into(),
                other => other.into(),
            })
        })
        .collect()
}

fn documents(records: Vec<CorpusRecord>) -> Vec<Document> {
    records.into_iter().map(|r| r.document).collect()
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let preds = read_predictions(&a.predictions)?;
    let docs = documents(read_records(&a.corpus, false)?);
    let scores = score_all(&preds, &docs)?;
    let report = aggregate(&scores);
    println!("{}", report.to_json());

    if let Some(base) = &a.baseline {
        let other = score_all(&read_predictions(base)?, &docs)?;
        if other.len() != scores.len() || other.iter().zip(&scores).any(|(x, y)| x.id != y.id) {
            bail!(Error::InvalidArgument(
                "baseline predictions must cover the same documents in the same order".into()
            ));
        }
        let a_r1: Vec<f64> = scores.iter().map(|s| s.rouge1.f1).collect();
        let b_r1: Vec<f64> = other.iter().map(|s| s.rouge1.f1).collect();
        let p = approx_randomization_test(&a_r1, &b_r1, a.iterations, a.seed)?;
        let diff = (a_r1.iter().sum::<f64>() - b_r1.iter().sum::<f64>()) / a_r1.len().max(1) as f64;
        println!(
            "{}",
            serde_json::json!({ "rouge1_f_diff": diff, "p_value": p, "iterations": a.iterations })
        );
    }

    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_text(&dir.join("report.json"), &report.to_json())?;
        let mut per_doc = String::new();
        for s in &scores {
            per_doc.push_str(&serde_json::to_string(s)?);
            per_doc.push('\n');
        }
        write_text(&dir.join("per_document.jsonl"), &per_doc)?;
        let have_scores = preds.iter().all(|p| !p.scores_sum.is_empty());
        if have_scores && a.k_max > 0 {
            write_text(
                &dir.join("rouge_vs_k.csv"),
                &rouge_vs_k_csv(&rouge_vs_k(&preds, &docs, a.k_max)?),
            )?;
        }
        let by_id: BTreeMap<&str, &Document> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
        let mut hist = BTreeMap::new();
        for p in &preds {
            if let Some(d) = by_id.get(p.doc_id.as_str()) {
                merge_histograms(
                    &mut hist,
                    &boundary_proximity_histogram(&p.selected, d.section_starts(), d.len()),
                );
            }
        }
        write_text(&dir.join("boundary_histogram.csv"), &histogram_csv(&hist))?;
    }
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> anyhow::Result<()> {
    let records = read_records(&a.corpus, false)?;
    let mut hist = BTreeMap::new();
    match &a.predictions {
        Some(p) => {
            let preds = read_predictions(p)?;
            let by_id: BTreeMap<&str, &Document> = records
                .iter()
                .map(|r| (r.document.id.as_str(), &r.document))
                .collect();
            for p in &preds {
                let d = by_id.get(p.doc_id.as_str()).ok_or_else(|| {
                    Error::InvalidArgument(format!("no document with id {:?}", p.doc_id))
                })?;
                merge_histograms(
                    &mut hist,
                    &boundary_proximity_histogram(&p.selected, d.section_starts(), d.len()),
                );
            }
        }
        None => {
            for r in &records {
                let labels = r
                    .labels
                    .as_ref()
                    .ok_or_else(|| Error::MissingLabels(r.document.id.clone()))?;
                let d = &r.document;
                merge_histograms(
                    &mut hist,
                    &boundary_proximity_histogram(
                        &summary_set(&labels.sum),
                        d.section_starts(),
                        d.len(),
                    ),
                );
            }
        }
    }
    let text = match &a.out {
        Some(p) if p.extension().is_some_and(|e| e == "csv") => histogram_csv(&hist),
        _ => histogram_json(&hist),
    };
    match &a.out {
        Some(p) => write_text(p, &text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> anyhow::Result<()> {
    let records = read_records(&a.corpus, false)?;
    let record = records.get(a.doc).ok_or_else(|| {
        Usage(format!(
            "document index {} out of range ({} documents)",
            a.doc,
            records.len()
        ))
    })?;
    let params = match (&a.checkpoint, &a.model_config) {
        (Some(p), _) => Checkpoint::load(p)?.params,
        (None, Some(m)) => ModelParams::init(&read_toml(m)?, a.seed)?,
        (None, None) => ModelParams::init(&ModelConfig::default(), a.seed)?,
    };
    let doc = &record.document;
    let n = doc.len().min(a.max_sentences.max(1));
    let starts: Vec<usize> = doc
        .section_starts()
        .iter()
        .copied()
        .filter(|&s| s < n)
        .collect();
    let texts: Vec<String> = doc.sentences()[..n]
        .iter()
        .map(|s| s.text.clone())
        .collect();
    let truncated = Document::new(doc.id.clone(), texts, starts, doc.reference_summary.clone())?;
    let y_sum = match &record.labels {
        Some(l) => l.sum[..n].to_vec(),
        None => build_labels(&truncated, None, a.seg_label)?.y_sum,
    };
    let y_seg = segsum::oracle::seg_labels(&truncated, a.seg_label);
    let example = TrainingExample::new(truncated, y_sum, y_seg, &params.config)?;
    let cfg = TrainConfig {
        variant: a.variant,
        beta: a.beta,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let report = grad_check(&params, &example, &cfg, a.step, a.tolerance)?;
    println!(
        "{:<6} {:<18} {:>12} {:>12}  status",
        "term", "block", "max_rel_err", "max_|grad|"
    );
    for b in &report.blocks {
        println!(
            "{:<6} {:<18} {:>12.3e} {:>12.3e}  {}",
            format!("{:?}", b.term).to_lowercase(),
            b.block,
            b.max_rel_error,
            b.max_abs_analytic,
            if b.flagged { "FLAGGED" } else { "ok" }
        );
    }
    println!(
        "max relative error {:.3e} (tolerance {:.0e}): {}",
        report.max_rel_error(),
        report.tolerance,
        if report.passed() { "PASS" } else { "FAIL" }
    );
    if !report.passed() {
        return Err(Error::Numeric("gradient check failed".into()).into());
    }
    Ok(())
}
