//! End-to-end tests of the `aste` binary: every subcommand, the layered
//! configuration rules, the fixed artifact names, and rerun determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aste_core::corpus::{write_aste_file, write_sc_file};
use aste_core::synthetic::{generate_corpus, generate_sc_corpus, make_synthetic_fixture, SyntheticConfig};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_aste"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary should launch")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed with {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Two sentences, four gold triples, mixed polarities.
const FIG_FIXTURE: &str = "\
The room was fine but the staff was rude .####[([1], [3], 'POS'), ([6], [8], 'NEG')]
The staff was helpful but the food was bland .####[([1], [3], 'POS'), ([6], [8], 'NEG')]
";

/// Write a small train/dev corpus pair and return their paths.
fn small_corpus(dir: &Path) -> (PathBuf, PathBuf) {
    let sentences = make_synthetic_fixture(21, 24);
    let train_path = dir.join("train.txt");
    let dev_path = dir.join("dev.txt");
    write_aste_file(&train_path, &sentences[..16]).unwrap();
    write_aste_file(&dev_path, &sentences[16..]).unwrap();
    (train_path, dev_path)
}

/// Train a quick model into `out` and return the archive path. Kept to a few
/// epochs: these tests exercise plumbing, not model quality.
fn quick_train(work: &Path, out: &Path, epochs: usize, seed: u64) -> PathBuf {
    let (train_path, dev_path) = small_corpus(work);
    let out_run = run(bin()
        .arg("train")
        .args(["--train", train_path.to_str().unwrap()])
        .args(["--dev", dev_path.to_str().unwrap()])
        .args(["--set", "train.min_epochs=1"])
        .args(["--set", &format!("train.max_epochs={epochs}")])
        .args(["--set", &format!("train.patience={epochs}")])
        .args(["--set", "pair.lambda=2.0"])
        .args(["--set", "train.dropout=0"])
        .args(["--seed", &seed.to_string()])
        .args(["--out", out.to_str().unwrap()]));
    assert_ok(&out_run);
    out.join("model.archive")
}

fn read_kv(path: &Path) -> Vec<(String, String)> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter_map(|l| l.split_once('\t'))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn kv_get(pairs: &[(String, String)], key: &str) -> String {
    pairs
        .iter()
        .find(|(k, _)| k == key)
        .unwrap_or_else(|| panic!("missing key {key}"))
        .1
        .clone()
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

#[test]
fn stats_counts_the_two_sentence_fixture() {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("fig.txt");
    std::fs::write(&corpus, FIG_FIXTURE).unwrap();
    let out_dir = dir.path().join("out");

    let out = run(bin()
        .arg("stats")
        .arg(&corpus)
        .args(["--out", out_dir.to_str().unwrap()]));
    assert_ok(&out);
    let text = stdout(&out);
    assert!(text.contains("n_sentences=2"), "stdout: {text}");
    assert!(text.contains("n_triplets=4"), "stdout: {text}");
    assert!(text.contains("n_positive=2"), "stdout: {text}");
    assert!(text.contains("n_negative=2"), "stdout: {text}");

    // The same numbers land in metrics.tsv, and the manifest identifies the run.
    let pairs = read_kv(&out_dir.join("metrics.tsv"));
    assert_eq!(kv_get(&pairs, "n_triplets"), "4");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("run_manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "stats");
    assert_eq!(manifest["artifact_version"], 1);
    assert!(manifest["inputs"]["corpus_0"].as_str().unwrap().ends_with("fig.txt"));
}

// ---------------------------------------------------------------------------
// train + eval
// ---------------------------------------------------------------------------

#[test]
fn train_then_eval_reproduces_the_stored_validation_f1() {
    let dir = TempDir::new().unwrap();
    let train_out = dir.path().join("run");
    let archive = quick_train(dir.path(), &train_out, 6, 3);

    for name in ["model.archive", "metrics.tsv", "history.tsv", "run_manifest.json"] {
        assert!(train_out.join(name).is_file(), "missing {name}");
    }
    let train_metrics = read_kv(&train_out.join("metrics.tsv"));
    let stored_f1: f64 = kv_get(&train_metrics, "val_f1").parse().unwrap();

    // History has one row per epoch plus a header, all with 11 columns.
    let history = std::fs::read_to_string(train_out.join("history.tsv")).unwrap();
    let epochs_run: usize = kv_get(&train_metrics, "epochs_run").parse().unwrap();
    assert_eq!(history.lines().count(), epochs_run + 1);
    assert!(history.lines().all(|l| l.split('\t').count() == 11));

    // Evaluating the archive on the dev split at the archived threshold must
    // reproduce the stored validation F1.
    let eval_out = dir.path().join("eval");
    let out = run(bin()
        .arg("eval")
        .args(["--model", archive.to_str().unwrap()])
        .args(["--data", dir.path().join("dev.txt").to_str().unwrap()])
        .args(["--out", eval_out.to_str().unwrap()]));
    assert_ok(&out);

    let metrics = std::fs::read_to_string(eval_out.join("metrics.tsv")).unwrap();
    let overall = metrics
        .lines()
        .find(|l| l.starts_with("overall\t"))
        .expect("metrics.tsv should hold an overall row");
    let eval_f1: f64 = overall.split('\t').nth(3).unwrap().parse().unwrap();
    assert!(
        (eval_f1 - stored_f1).abs() <= 1e-6,
        "eval F1 {eval_f1} vs stored validation F1 {stored_f1}"
    );

    // One prediction line per dev sentence, each valid JSON with an id.
    let preds = std::fs::read_to_string(eval_out.join("predictions.jsonl")).unwrap();
    assert_eq!(preds.lines().count(), 8);
    for line in preds.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["id"].is_string());
        assert!(v["triples"].is_array());
    }
}

#[test]
fn reruns_write_byte_identical_artifacts() {
    let dir = TempDir::new().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    quick_train(dir.path(), &out_a, 3, 11);
    quick_train(dir.path(), &out_b, 3, 11);

    for name in ["model.archive", "metrics.tsv", "history.tsv"] {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical reruns");
    }
}

#[test]
fn eval_above_every_similarity_emits_no_triples() {
    let dir = TempDir::new().unwrap();
    let train_out = dir.path().join("run");
    let archive = quick_train(dir.path(), &train_out, 2, 1);

    let eval_out = dir.path().join("eval");
    let out = run(bin()
        .arg("eval")
        .args(["--model", archive.to_str().unwrap()])
        .args(["--data", dir.path().join("dev.txt").to_str().unwrap()])
        .args(["--tau", "1e9"])
        .args(["--out", eval_out.to_str().unwrap()]));
    assert_ok(&out);

    let preds = std::fs::read_to_string(eval_out.join("predictions.jsonl")).unwrap();
    assert_eq!(preds.lines().count(), 8);
    for line in preds.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["triples"].as_array().unwrap().len(), 0, "line: {line}");
    }
    let metrics = std::fs::read_to_string(eval_out.join("metrics.tsv")).unwrap();
    let overall = metrics.lines().find(|l| l.starts_with("overall\t")).unwrap();
    assert_eq!(overall.split('\t').nth(5).unwrap(), "0", "n_pred should be 0");
}

// ---------------------------------------------------------------------------
// configuration layering
// ---------------------------------------------------------------------------

#[test]
fn config_file_overrides_defaults_and_flags_override_the_file() {
    let dir = TempDir::new().unwrap();
    let (train_path, dev_path) = small_corpus(dir.path());
    let config = dir.path().join("run.conf");
    std::fs::write(
        &config,
        "# quick run\ntrain.min_epochs = 1\ntrain.max_epochs = 2\npair.tau_test = 0.9\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");

    let out = run(bin()
        .arg("train")
        .args(["--train", train_path.to_str().unwrap()])
        .args(["--dev", dev_path.to_str().unwrap()])
        .args(["--config", config.to_str().unwrap()])
        .args(["--set", "pair.tau_test=0.55"])
        .args(["--out", out_dir.to_str().unwrap()]));
    assert_ok(&out);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("run_manifest.json")).unwrap())
            .unwrap();
    // Flag beat the file; file beat the default (130).
    assert_eq!(manifest["config"]["pipeline"]["pair"]["tau_test"], 0.55);
    assert_eq!(manifest["config"]["train"]["max_epochs"], 2);
    assert_eq!(manifest["seed"], 0);
}

#[test]
fn unknown_config_key_fails_fast() {
    let dir = TempDir::new().unwrap();
    let (train_path, dev_path) = small_corpus(dir.path());
    let out = run(bin()
        .arg("train")
        .args(["--train", train_path.to_str().unwrap()])
        .args(["--dev", dev_path.to_str().unwrap()])
        .args(["--set", "pear.tau_test=0.5"])
        .args(["--out", dir.path().join("out").to_str().unwrap()]));
    assert!(!out.status.success());
    assert!(
        stderr(&out).contains("unknown configuration key `pear.tau_test`"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn unknown_flags_fail_fast() {
    let out = run(bin().arg("train").arg("--frobnicate"));
    assert!(!out.status.success());
    assert!(stderr(&out).contains("unexpected argument"), "stderr: {}", stderr(&out));
}

#[test]
fn help_lists_subcommands_and_config_keys() {
    let out = run(bin().arg("--help"));
    assert_ok(&out);
    let text = stdout(&out);
    for needle in ["train", "pretrain", "eval", "tau", "stats", "viz", "pair.tau_test", "phases.gold"] {
        assert!(text.contains(needle), "--help should mention {needle}");
    }
}

// ---------------------------------------------------------------------------
// tau sweep and viz
// ---------------------------------------------------------------------------

#[test]
fn tau_sweep_writes_a_monotone_curve_and_a_selection() {
    let dir = TempDir::new().unwrap();
    let train_out = dir.path().join("run");
    let archive = quick_train(dir.path(), &train_out, 2, 6);

    let sweep_out = dir.path().join("sweep");
    let out = run(bin()
        .arg("tau")
        .args(["--model", archive.to_str().unwrap()])
        .args(["--data", dir.path().join("dev.txt").to_str().unwrap()])
        .args(["--points", "25"])
        .args(["--out", sweep_out.to_str().unwrap()]));
    assert_ok(&out);
    assert!(stdout(&out).contains("selected_tau="));

    let curve = std::fs::read_to_string(sweep_out.join("tau_curve.tsv")).unwrap();
    let rows: Vec<Vec<f64>> = curve
        .lines()
        .skip(1)
        .map(|l| l.split('\t').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 25);
    for w in rows.windows(2) {
        assert!(w[1][0] > w[0][0], "tau grid should increase");
        assert!(w[1][2] <= w[0][2] + 1e-12, "recall should not rise with tau");
    }
    let metrics = read_kv(&sweep_out.join("metrics.tsv"));
    let selected: f64 = kv_get(&metrics, "selected_tau").parse().unwrap();
    assert!(rows.iter().any(|r| (r[0] - selected).abs() < 1e-9), "selected tau should be a grid point");
}

#[test]
fn viz_exports_a_point_per_projected_span() {
    let dir = TempDir::new().unwrap();
    let train_out = dir.path().join("run");
    let archive = quick_train(dir.path(), &train_out, 2, 8);

    let viz_out = dir.path().join("viz");
    let out = run(bin()
        .arg("viz")
        .args(["--model", archive.to_str().unwrap()])
        .args(["--data", dir.path().join("dev.txt").to_str().unwrap()])
        .args(["--out", viz_out.to_str().unwrap()]));
    assert_ok(&out);

    let points = std::fs::read_to_string(viz_out.join("pca_points.tsv")).unwrap();
    let mut lines = points.lines();
    assert_eq!(lines.next().unwrap(), "x\ty\trole\tgold_valid\tspan_text");
    let mut n = 0;
    for line in lines {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols.len(), 5, "line: {line}");
        let x: f64 = cols[0].parse().unwrap();
        let y: f64 = cols[1].parse().unwrap();
        assert!(x.is_finite() && y.is_finite());
        assert!(cols[2] == "aspect" || cols[2] == "opinion", "role: {}", cols[2]);
        n += 1;
    }
    assert!(n >= 2, "expected at least two projected spans, got {n}");

    // Asking for a sentence that does not exist is an error.
    let out = run(bin()
        .arg("viz")
        .args(["--model", archive.to_str().unwrap()])
        .args(["--data", dir.path().join("dev.txt").to_str().unwrap()])
        .args(["--id", "no-such-sentence"])
        .args(["--out", dir.path().join("viz2").to_str().unwrap()]));
    assert!(!out.status.success());
    assert!(stderr(&out).contains("no-such-sentence"));
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

#[test]
fn pretrain_runs_all_three_phases_from_a_teacher_archive() {
    let dir = TempDir::new().unwrap();

    // A better-trained teacher on a corpus wide enough to cover the
    // sentiment corpus vocabulary.
    let corpus = generate_corpus(&SyntheticConfig::new(5, 60));
    let train_path = dir.path().join("train.txt");
    let dev_path = dir.path().join("dev.txt");
    write_aste_file(&train_path, &corpus[..48]).unwrap();
    write_aste_file(&dev_path, &corpus[48..]).unwrap();

    let teacher_out = dir.path().join("teacher");
    let out = run(bin()
        .arg("train")
        .args(["--train", train_path.to_str().unwrap()])
        .args(["--dev", dev_path.to_str().unwrap()])
        .args(["--set", "train.max_epochs=60"])
        .args(["--set", "pair.lambda=2.0"])
        .args(["--set", "train.dropout=0"])
        .args(["--set", "train.patience=60"])
        .args(["--seed", "0"])
        .args(["--out", teacher_out.to_str().unwrap()]));
    assert_ok(&out);

    let sc_path = dir.path().join("sc.txt");
    write_sc_file(&sc_path, &generate_sc_corpus(13, 8)).unwrap();

    let staged_out = dir.path().join("staged");
    let out = run(bin()
        .arg("pretrain")
        .args(["--train", train_path.to_str().unwrap()])
        .args(["--dev", dev_path.to_str().unwrap()])
        .args(["--sc-corpus", sc_path.to_str().unwrap()])
        .args(["--teacher", teacher_out.join("model.archive").to_str().unwrap()])
        .args(["--phases", "1,1,3"])
        .args(["--set", "train.min_epochs=1"])
        .args(["--set", "train.patience=3"])
        .args(["--set", "pair.lambda=2.0"])
        .args(["--set", "train.dropout=0"])
        .args(["--seed", "2"])
        .args(["--out", staged_out.to_str().unwrap()]));
    assert_ok(&out);

    let metrics = read_kv(&staged_out.join("metrics.tsv"));
    let labeled: usize = kv_get(&metrics, "n_pseudo_labeled").parse().unwrap();
    assert!(labeled >= 1, "teacher should pseudo-label at least one sentence");

    let history = std::fs::read_to_string(staged_out.join("history.tsv")).unwrap();
    for phase in ["pseudo", "mixed", "gold"] {
        assert!(
            history.lines().any(|l| l.split('\t').nth(1) == Some(phase)),
            "history should record a {phase} phase"
        );
    }
    assert!(staged_out.join("model.archive").is_file());
}

// ---------------------------------------------------------------------------
// manifest-first behavior
// ---------------------------------------------------------------------------

#[test]
fn manifest_lands_even_when_the_data_file_is_missing() {
    let dir = TempDir::new().unwrap();
    let train_out = dir.path().join("run");
    let archive = quick_train(dir.path(), &train_out, 2, 4);

    let eval_out = dir.path().join("eval");
    let out = run(bin()
        .arg("eval")
        .args(["--model", archive.to_str().unwrap()])
        .args(["--data", dir.path().join("nope.txt").to_str().unwrap()])
        .args(["--out", eval_out.to_str().unwrap()]));
    assert!(!out.status.success());
    // The manifest was written before the corpus was opened.
    assert!(eval_out.join("run_manifest.json").is_file());
    assert!(!eval_out.join("metrics.tsv").exists());
}
