//! Subcommand implementations.
//!
//! Every command follows the same shape: resolve the layered configuration,
//! write a `run_manifest.json` snapshot before any work starts, do the work,
//! and leave fixed-name artifacts in the output directory (`model.archive`,
//! `metrics.tsv`, `history.tsv`, `predictions.jsonl`, `tau_curve.tsv`,
//! `pca_points.tsv` as applicable). Given identical inputs and seed, reruns
//! produce byte-identical metric artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;

use aste_core::archive::ModelArchive;
use aste_core::corpus::{compute_stats, parse_aste_file, parse_sc_file, Sentence};
use aste_core::eval::{diagnostics, evaluate_model, predict, select_tau, tau_curve, tau_grid};
use aste_core::model::Model;
use aste_core::pairs::export_search_space;
use aste_core::pretrain::{pseudo_label, staged_train, PhasePlan};
use aste_core::train::{train, TrainOutcome};
use aste_core::triplets::TripletClass;

use crate::config::{self, Settings};
use crate::manifest::{write_atomic, RunManifest};

// ---------------------------------------------------------------------------
// shared argument blocks
// ---------------------------------------------------------------------------

/// Flags shared by the commands that build or refine a model.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Flat key-value config file applied over built-in defaults.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Inline override applied after the config file; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Seed for model initialization and batch shuffling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<Settings> {
        let mut settings = config::resolve(self.config.as_deref(), &self.sets)?;
        settings.train.seed = self.seed;
        Ok(settings)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Gold training corpus (`sentence####[triples]` lines).
    #[arg(long, value_name = "FILE")]
    pub train: PathBuf,
    /// Validation corpus for early stopping.
    #[arg(long, value_name = "FILE")]
    pub dev: PathBuf,
    /// Optional held-out corpus evaluated once with the final model.
    #[arg(long, value_name = "FILE")]
    pub test: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Gold training corpus.
    #[arg(long, value_name = "FILE")]
    pub train: PathBuf,
    /// Validation corpus for early stopping.
    #[arg(long, value_name = "FILE")]
    pub dev: PathBuf,
    /// Optional held-out corpus evaluated once with the final model.
    #[arg(long, value_name = "FILE")]
    pub test: Option<PathBuf>,
    /// Sentence-sentiment corpus to pseudo-label (`sentence<TAB>POS` lines).
    #[arg(long = "sc-corpus", value_name = "FILE")]
    pub sc_corpus: PathBuf,
    /// Archived teacher model used to extract spans for pseudo-labels.
    #[arg(long, value_name = "FILE")]
    pub teacher: PathBuf,
    /// Epoch budget per phase as `pseudo,mixed,gold`; overrides config keys.
    #[arg(long, value_name = "P,M,G")]
    pub phases: Option<String>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Archived model to evaluate.
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Corpus to evaluate on.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Matching threshold; defaults to the archived test-time threshold.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TauArgs {
    /// Archived model to sweep.
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Corpus the sweep is computed on (typically the dev split).
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Bottom of the threshold grid.
    #[arg(long, default_value_t = -0.5)]
    pub lo: f64,
    /// Top of the threshold grid.
    #[arg(long, default_value_t = 5.0)]
    pub hi: f64,
    /// Number of grid points.
    #[arg(long, default_value_t = 50)]
    pub points: usize,
    /// Precision jump treated as the knee when walking the curve.
    #[arg(long = "knee-drop", default_value_t = 0.1)]
    pub knee_drop: f64,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// One or more triplet corpus files; statistics cover their union.
    #[arg(required = true, value_name = "FILE")]
    pub files: Vec<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    /// Archived model whose pair embeddings are exported.
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Corpus holding the sentence to visualize.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Sentence id to visualize; defaults to the first sentence.
    #[arg(long)]
    pub id: Option<String>,
    /// Matching threshold for the traced forward pass; defaults to the
    /// archived test-time threshold.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

// ---------------------------------------------------------------------------
// small output helpers
// ---------------------------------------------------------------------------

fn load_corpus(path: &Path) -> Result<Vec<Sentence>> {
    parse_aste_file(path).with_context(|| format!("cannot load corpus {}", path.display()))
}

fn write_kv(path: &Path, pairs: &[(&str, String)]) -> Result<()> {
    let mut s = String::new();
    for (k, v) in pairs {
        let _ = writeln!(s, "{k}\t{v}");
    }
    write_atomic(path, s.as_bytes())
}

fn write_history(path: &Path, outcome: &TrainOutcome) -> Result<()> {
    let mut s = String::from(
        "epoch\tphase\ttrain_total\ttrain_aste\ttrain_span\ttrain_ao\ttrain_crf\tgrad_norm_max\tval_precision\tval_recall\tval_f1\n",
    );
    for r in &outcome.history {
        let _ = writeln!(
            s,
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            r.epoch, r.phase, r.train_total, r.train_aste, r.train_span, r.train_ao, r.train_crf,
            r.grad_norm_max, r.val_precision, r.val_recall, r.val_f1
        );
    }
    write_atomic(path, s.as_bytes())
}

fn save_archive(outcome: &TrainOutcome, out_dir: &Path) -> Result<PathBuf> {
    let path = out_dir.join("model.archive");
    let tmp = out_dir.join("model.archive.tmp");
    outcome.to_archive().save(&tmp)?;
    std::fs::rename(&tmp, &path)
        .with_context(|| format!("cannot move archive into {}", path.display()))?;
    Ok(path)
}

fn load_model(path: &Path) -> Result<(ModelArchive, Model)> {
    let archive =
        ModelArchive::load(path).with_context(|| format!("cannot load model {}", path.display()))?;
    let model = archive.instantiate(None)?;
    Ok((archive, model))
}

#[derive(Serialize)]
struct TripleRecord {
    aspect: [usize; 2],
    opinion: [usize; 2],
    polarity: &'static str,
    confidence: f64,
}

#[derive(Serialize)]
struct PredictionRecord<'a> {
    id: &'a str,
    triples: Vec<TripleRecord>,
}

/// One JSON object per sentence; sentences without predictions keep their
/// line with an empty `triples` array so the file stays index-aligned with
/// the input corpus.
fn write_predictions(path: &Path, data: &[Sentence], model: &Model, tau: f64) -> Result<usize> {
    let mut s = String::new();
    let mut n_triples = 0usize;
    for sentence in data {
        let preds = predict(model, sentence, tau)?;
        let triples: Vec<TripleRecord> = preds
            .iter()
            .map(|p| TripleRecord {
                aspect: [p.aspect_span.start, p.aspect_span.end],
                opinion: [p.opinion_span.start, p.opinion_span.end],
                polarity: match p.predicted_class {
                    TripletClass::Positive => "POS",
                    TripletClass::Negative => "NEG",
                    TripletClass::Neutral => "NEU",
                    TripletClass::Invalid => "INVALID",
                },
                confidence: p.max_prob(),
            })
            .collect();
        n_triples += triples.len();
        let record = PredictionRecord {
            id: &sentence.id,
            triples,
        };
        s.push_str(&serde_json::to_string(&record)?);
        s.push('\n');
    }
    write_atomic(path, s.as_bytes())?;
    Ok(n_triples)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let t0 = Instant::now();
    let settings = args.config.resolve()?;

    let mut manifest = RunManifest::new("train", args.config.seed, settings.clone())
        .input("train", &args.train)
        .input("dev", &args.dev)
        .output("model", "model.archive")
        .output("metrics", "metrics.tsv")
        .output("history", "history.tsv");
    if let Some(test) = &args.test {
        manifest = manifest.input("test", test);
    }
    manifest.write(&args.out)?;

    let train_set = load_corpus(&args.train)?;
    let dev_set = load_corpus(&args.dev)?;
    let outcome = train(&settings.pipeline, &settings.train, &train_set, &dev_set)?;

    save_archive(&outcome, &args.out)?;
    write_history(&args.out.join("history.tsv"), &outcome)?;

    let mut pairs: Vec<(&str, String)> = vec![
        ("best_epoch", outcome.best_epoch.to_string()),
        ("epochs_run", outcome.history.len().to_string()),
        ("val_precision", format!("{:.6}", outcome.best_val.precision)),
        ("val_recall", format!("{:.6}", outcome.best_val.recall)),
        ("val_f1", format!("{:.6}", outcome.best_val.f1)),
    ];
    if let Some(test) = &args.test {
        let test_set = load_corpus(test)?;
        let report = evaluate_model(&outcome.model, &test_set, settings.pipeline.pair.tau_test)?;
        pairs.push(("test_precision", format!("{:.6}", report.precision)));
        pairs.push(("test_recall", format!("{:.6}", report.recall)));
        pairs.push(("test_f1", format!("{:.6}", report.f1)));
    }
    write_kv(&args.out.join("metrics.tsv"), &pairs)?;

    println!(
        "trained {} sentences, best epoch {} val F1 {:.4}, artifacts in {} ({:.1}s)",
        train_set.len(),
        outcome.best_epoch,
        outcome.best_val.f1,
        args.out.display(),
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

fn parse_phases(text: &str) -> Result<PhasePlan> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        bail!("--phases expects `pseudo,mixed,gold`, got `{text}`");
    }
    let parse = |s: &str| -> Result<usize> {
        s.parse()
            .map_err(|e| anyhow::anyhow!("invalid phase epoch count `{s}`: {e}"))
    };
    Ok(PhasePlan {
        pseudo_epochs: parse(parts[0])?,
        mixed_epochs: parse(parts[1])?,
        gold_epochs: parse(parts[2])?,
    })
}

pub fn cmd_pretrain(args: &PretrainArgs) -> Result<()> {
    let t0 = Instant::now();
    let mut settings = args.config.resolve()?;
    if let Some(phases) = &args.phases {
        settings.phases = parse_phases(phases)?;
    }

    let mut manifest = RunManifest::new("pretrain", args.config.seed, settings.clone())
        .input("train", &args.train)
        .input("dev", &args.dev)
        .input("sc_corpus", &args.sc_corpus)
        .input("teacher", &args.teacher)
        .output("model", "model.archive")
        .output("metrics", "metrics.tsv")
        .output("history", "history.tsv");
    if let Some(test) = &args.test {
        manifest = manifest.input("test", test);
    }
    manifest.write(&args.out)?;

    let train_set = load_corpus(&args.train)?;
    let dev_set = load_corpus(&args.dev)?;
    let sc = parse_sc_file(&args.sc_corpus)
        .with_context(|| format!("cannot load sentiment corpus {}", args.sc_corpus.display()))?;
    let (teacher_archive, teacher) = load_model(&args.teacher)?;

    let pseudo = pseudo_label(
        &teacher,
        &teacher_archive.archive_id,
        &sc,
        &args.sc_corpus.display().to_string(),
    )?;
    log::info!(
        "pseudo-labeled {}/{} sentiment sentences",
        pseudo.sentences.len(),
        sc.len()
    );

    let outcome = staged_train(
        &settings.pipeline,
        &settings.train,
        &settings.phases,
        &pseudo.sentences,
        &train_set,
        &dev_set,
    )?;

    save_archive(&outcome, &args.out)?;
    write_history(&args.out.join("history.tsv"), &outcome)?;

    let mut pairs: Vec<(&str, String)> = vec![
        ("n_sc_examples", sc.len().to_string()),
        ("n_pseudo_labeled", pseudo.sentences.len().to_string()),
        ("best_epoch", outcome.best_epoch.to_string()),
        ("epochs_run", outcome.history.len().to_string()),
        ("val_precision", format!("{:.6}", outcome.best_val.precision)),
        ("val_recall", format!("{:.6}", outcome.best_val.recall)),
        ("val_f1", format!("{:.6}", outcome.best_val.f1)),
    ];
    if let Some(test) = &args.test {
        let test_set = load_corpus(test)?;
        let report = evaluate_model(&outcome.model, &test_set, settings.pipeline.pair.tau_test)?;
        pairs.push(("test_precision", format!("{:.6}", report.precision)));
        pairs.push(("test_recall", format!("{:.6}", report.recall)));
        pairs.push(("test_f1", format!("{:.6}", report.f1)));
    }
    write_kv(&args.out.join("metrics.tsv"), &pairs)?;

    println!(
        "staged training done: {} pseudo sentences, best epoch {} val F1 {:.4}, artifacts in {} ({:.1}s)",
        pseudo.sentences.len(),
        outcome.best_epoch,
        outcome.best_val.f1,
        args.out.display(),
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (archive, model) = load_model(&args.model)?;
    let tau = args.tau.unwrap_or(model.config.pair.tau_test);

    let settings = Settings {
        pipeline: archive.config.clone(),
        ..Settings::default()
    };
    RunManifest::new("eval", archive.seed, settings)
        .input("model", &args.model)
        .input("data", &args.data)
        .output("metrics", "metrics.tsv")
        .output("predictions", "predictions.jsonl")
        .write(&args.out)?;

    let data = load_corpus(&args.data)?;
    let overall = evaluate_model(&model, &data, tau)?;
    let diag = diagnostics(&model, &data, tau)?;
    let n_pred = write_predictions(&args.out.join("predictions.jsonl"), &data, &model, tau)?;

    let mut s = String::from("layer\tprecision\trecall\tf1\tn_gold\tn_pred\tn_correct\n");
    for (name, r) in [
        ("span_validity", &diag.span_binary),
        ("pair_matching", &diag.pair_layer),
        ("class_4way", &diag.final_4class),
        ("class_binary", &diag.final_binary),
        ("overall", &overall),
    ] {
        let _ = writeln!(
            s,
            "{name}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{}",
            r.precision, r.recall, r.f1, r.n_gold, r.n_pred, r.n_correct
        );
    }
    let _ = writeln!(s, "tau\t{tau:.6}\t\t\t\t\t");
    write_atomic(&args.out.join("metrics.tsv"), s.as_bytes())?;

    println!(
        "evaluated {} sentences at tau {:.3}: P {:.4} R {:.4} F1 {:.4} ({} predicted triples)",
        data.len(),
        tau,
        overall.precision,
        overall.recall,
        overall.f1,
        n_pred
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// tau sweep
// ---------------------------------------------------------------------------

pub fn cmd_tau(args: &TauArgs) -> Result<()> {
    if args.points < 2 || args.hi <= args.lo {
        bail!("threshold grid needs at least 2 points and hi > lo");
    }
    let (archive, model) = load_model(&args.model)?;

    let settings = Settings {
        pipeline: archive.config.clone(),
        ..Settings::default()
    };
    RunManifest::new("tau", archive.seed, settings)
        .input("model", &args.model)
        .input("data", &args.data)
        .output("curve", "tau_curve.tsv")
        .output("metrics", "metrics.tsv")
        .write(&args.out)?;

    let data = load_corpus(&args.data)?;
    let grid = tau_grid(args.lo, args.hi, args.points);
    let curve = tau_curve(&model, &data, &grid)?;
    let selected = select_tau(&curve, args.knee_drop);

    let mut s = String::from("tau\tprecision\trecall\n");
    for sample in &curve {
        let _ = writeln!(s, "{:.6}\t{:.6}\t{:.6}", sample.tau, sample.precision, sample.recall);
    }
    write_atomic(&args.out.join("tau_curve.tsv"), s.as_bytes())?;
    write_kv(
        &args.out.join("metrics.tsv"),
        &[
            ("selected_tau", format!("{selected:.6}")),
            ("grid_lo", format!("{:.6}", args.lo)),
            ("grid_hi", format!("{:.6}", args.hi)),
            ("grid_points", args.points.to_string()),
            ("knee_drop", format!("{:.6}", args.knee_drop)),
        ],
    )?;

    println!("selected_tau={selected:.6}");
    Ok(())
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

pub fn cmd_stats(args: &StatsArgs) -> Result<()> {
    let mut manifest = RunManifest::new("stats", 0, Settings::default());
    for (i, f) in args.files.iter().enumerate() {
        manifest = manifest.input(&format!("corpus_{i}"), f);
    }
    manifest.output("metrics", "metrics.tsv").write(&args.out)?;

    let mut sentences = Vec::new();
    for f in &args.files {
        sentences.extend(load_corpus(f)?);
    }
    let stats = compute_stats(&sentences);

    let pairs: Vec<(&str, String)> = vec![
        ("n_sentences", stats.n_sentences.to_string()),
        ("n_triplets", stats.n_triplets.to_string()),
        ("n_positive", stats.n_positive.to_string()),
        ("n_negative", stats.n_negative.to_string()),
        ("n_neutral", stats.n_neutral.to_string()),
        ("n_aspect_phrases", stats.n_aspect_phrases.to_string()),
        ("n_single_word_aspect", stats.n_single_word_aspect.to_string()),
        ("n_multi_word_aspect", stats.n_multi_word_aspect.to_string()),
        ("n_opinion_phrases", stats.n_opinion_phrases.to_string()),
        ("n_single_word_opinion", stats.n_single_word_opinion.to_string()),
        ("n_multi_word_opinion", stats.n_multi_word_opinion.to_string()),
        ("n_one_to_many_aspect_side", stats.n_one_to_many_aspect_side.to_string()),
        ("n_one_to_many_opinion_side", stats.n_one_to_many_opinion_side.to_string()),
        ("mean_sentence_length", format!("{:.4}", stats.mean_sentence_length)),
        ("mean_aspect_length", format!("{:.4}", stats.mean_aspect_length)),
        ("mean_opinion_length", format!("{:.4}", stats.mean_opinion_length)),
    ];
    for (k, v) in &pairs {
        println!("{k}={v}");
    }
    write_kv(&args.out.join("metrics.tsv"), &pairs)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// viz
// ---------------------------------------------------------------------------

pub fn cmd_viz(args: &VizArgs) -> Result<()> {
    let (archive, model) = load_model(&args.model)?;
    let tau = args.tau.unwrap_or(model.config.pair.tau_test);

    let settings = Settings {
        pipeline: archive.config.clone(),
        ..Settings::default()
    };
    RunManifest::new("viz", archive.seed, settings)
        .input("model", &args.model)
        .input("data", &args.data)
        .output("points", "pca_points.tsv")
        .write(&args.out)?;

    let data = load_corpus(&args.data)?;
    let sentence = match &args.id {
        Some(id) => data
            .iter()
            .find(|s| &s.id == id)
            .with_context(|| format!("no sentence with id `{id}` in {}", args.data.display()))?,
        None => data
            .first()
            .with_context(|| format!("{} holds no sentences", args.data.display()))?,
    };

    let trace = model.forward_eval(sentence, tau, false)?;
    let points = export_search_space(&trace.projected, sentence)?;

    let mut s = String::from("x\ty\trole\tgold_valid\tspan_text\n");
    for p in &points {
        let _ = writeln!(s, "{:.6}\t{:.6}\t{}\t{}\t{}", p.x, p.y, p.role, p.gold_valid, p.span_text);
    }
    write_atomic(&args.out.join("pca_points.tsv"), s.as_bytes())?;

    println!(
        "wrote {} projected span points for sentence `{}` to {}",
        points.len(),
        sentence.id,
        args.out.join("pca_points.tsv").display()
    );
    Ok(())
}
