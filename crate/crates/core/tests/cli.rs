mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use clwe::embed_io::{load_dictionary, load_embeddings};
use clwe::eval::parse_key_values;
use common::*;

fn clwe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clwe")).args(args).output().expect("spawn clwe")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn metric(dir: &Path, system: &str, k: usize) -> f64 {
    let text = fs::read_to_string(dir.join("metrics.txt")).unwrap();
    let reports = parse_key_values(&text).unwrap();
    reports.iter().find(|(n, _)| n == system).unwrap().1.precision_at[&k]
}

fn synthetic_dir(seed: u64, n: usize, d: usize, sigma: f64) -> (tempfile::TempDir, Synthetic) {
    let dir = tempfile::tempdir().unwrap();
    let s = synthetic_pair(seed, n, d, sigma);
    write_synthetic(dir.path(), &s);
    (dir, s)
}

#[test]
fn missing_input_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.vec");
    let out = clwe(&["align", "--src", p(&missing), "--trg", p(&missing), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains(p(&missing)));
}

#[test]
fn unknown_config_key_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "[mapping]\nvocab_cutof = 10\n").unwrap();
    let out = clwe(&["align", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn align_max_iterations_one_exits_two() {
    let (dir, _) = synthetic_dir(1, 200, 8, 0.05);
    let d = dir.path();
    let out = clwe(&[
        "align", "--src", p(&d.join("src.vec")), "--trg", p(&d.join("trg.vec")),
        "--out", p(&d.join("run")), "--max-iterations", "1",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("converged false"));
    assert!(d.join("run/dictionary.txt").exists());
}

#[test]
fn align_recovers_synthetic_dictionary() {
    let (dir, s) = synthetic_dir(2, 1000, 20, 0.0);
    let d = dir.path();
    let run = d.join("run");
    let out = clwe(&["align", "--src", p(&d.join("src.vec")), "--trg", p(&d.join("trg.vec")), "--out", p(&run)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let (sv, _) = load_embeddings(run.join("src.mapped.vec"), None).unwrap();
    let (tv, _) = load_embeddings(run.join("trg.mapped.vec"), None).unwrap();
    let dict = load_dictionary(run.join("dictionary.txt"), &sv, &tv).unwrap();
    assert!(dictionary_accuracy(dict.pairs(), &s.perm) >= 0.95);
}

#[test]
fn pipeline_end_to_end_and_reproducible() {
    let (dir, _) = synthetic_dir(3, 1000, 20, 0.0);
    let d = dir.path();
    let args = |out: &Path, threads: &'static str| {
        vec![
            "pipeline".to_string(), "--src".into(), p(&d.join("src.vec")).into(), "--trg".into(),
            p(&d.join("trg.vec")).into(), "--gold".into(), p(&d.join("gold.txt")).into(), "--out".into(),
            p(out).into(), "--threads".into(), threads.into(), "--seed".into(), "7".into(),
        ]
    };
    let run = |out: &Path, threads| {
        let a = args(out, threads);
        let out = clwe(&a.iter().map(String::as_str).collect::<Vec<_>>());
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        out
    };
    let first = d.join("a");
    let out = run(&first, "2");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("refined"), "{stdout}");
    assert!(metric(&first, "refined", 1) >= 0.95);
    assert!(metric(&first, "aligned", 1) >= 0.95);
    for f in ["src.mapped.vec", "trg.mapped.vec", "src.refined.vec", "trg.refined.vec", "dictionary.txt", "manifest.toml"] {
        assert!(first.join(f).exists(), "{f}");
    }

    let second = d.join("b");
    run(&second, "3");
    let read = |dir: &Path, f: &str| fs::read(dir.join(f)).unwrap();
    assert_eq!(read(&first, "metrics.txt"), read(&second, "metrics.txt"));
    assert_eq!(read(&first, "dictionary.txt"), read(&second, "dictionary.txt"));
    assert_eq!(read(&first, "src.refined.vec"), read(&second, "src.refined.vec"));

    // the manifest alone is enough to repeat the run
    let third = d.join("c");
    let out = clwe(&["pipeline", "--config", p(&first.join("manifest.toml")), "--out", p(&third)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read(&first, "metrics.txt"), read(&third, "metrics.txt"));
    let manifest: toml::Table = toml::from_str(&String::from_utf8(read(&first, "manifest.toml")).unwrap()).unwrap();
    let again: toml::Table = toml::from_str(&String::from_utf8(read(&third, "manifest.toml")).unwrap()).unwrap();
    assert_eq!(manifest["metrics"], again["metrics"]);
    assert_eq!(manifest["run"]["seed"].as_integer(), Some(7));
}

#[test]
fn skip_refine_equals_align_then_evaluate() {
    let (dir, _) = synthetic_dir(4, 400, 12, 0.05);
    let d = dir.path();
    let (src, trg, gold) = (d.join("src.vec"), d.join("trg.vec"), d.join("gold.txt"));
    let piped = d.join("piped");
    let out = clwe(&[
        "pipeline", "--src", p(&src), "--trg", p(&trg), "--gold", p(&gold), "--out", p(&piped), "--skip-refine",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!piped.join("src.refined.vec").exists());

    let staged = d.join("staged");
    let out = clwe(&["align", "--src", p(&src), "--trg", p(&trg), "--out", p(&staged)]);
    assert_eq!(out.status.code(), Some(0));
    let out = clwe(&[
        "evaluate", "--src", p(&staged.join("src.mapped.vec")), "--trg", p(&staged.join("trg.mapped.vec")),
        "--gold", p(&gold), "--out", p(&staged), "--name", "aligned",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    for f in ["src.mapped.vec", "trg.mapped.vec", "dictionary.txt", "metrics.txt"] {
        assert_eq!(fs::read(piped.join(f)).unwrap(), fs::read(staged.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn refine_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("src.vec"), "2 2\na 1 0\nb 0.6 0.8\n").unwrap();
    fs::write(d.join("trg.vec"), "2 2\nx 0 1\ny -1 0\n").unwrap();
    fs::write(d.join("dictionary.txt"), "a x\n").unwrap();
    let out = clwe(&[
        "refine", "--src", p(&d.join("src.vec")), "--trg", p(&d.join("trg.vec")), "--out", p(&d.join("r")),
        "--norm-iters", "0",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("pairs_averaged 1"));
    let (_, x) = load_embeddings(d.join("r/src.refined.vec"), None).unwrap();
    let (_, z) = load_embeddings(d.join("r/trg.refined.vec"), None).unwrap();
    assert_eq!(x.row(0), &[0.5, 0.5]);
    assert_eq!(z.row(0), &[0.5, 0.5]);
    assert_eq!(x.row(1), &[0.6, 0.8]);

    // antipodal pair: averaging gives a zero row
    fs::write(d.join("dictionary.txt"), "a y\n").unwrap();
    let out = clwe(&["refine", "--src", p(&d.join("src.vec")), "--trg", p(&d.join("trg.vec")), "--out", p(&d.join("r"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("(0, 1)"));
}

#[test]
fn evaluate_compare_against_baseline_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("src.vec"), "2 2\ncat 1 0\ndog 0 1\n").unwrap();
    fs::write(d.join("trg.vec"), "3 2\ngato 1 0\nperro 0.1 1\nmesa 0 1\n").unwrap();
    fs::write(d.join("gold.txt"), "cat gato\ndog perro\n").unwrap();
    let base = d.join("base");
    fs::create_dir(&base).unwrap();
    fs::write(base.join("metrics.txt"), "baseline.1=0.3\nbaseline.2=0.5\nbaseline.evaluated=2\nbaseline.oov=0\nbaseline.excluded=0\n")
        .unwrap();
    let out = clwe(&[
        "evaluate", "--src", p(&d.join("src.vec")), "--trg", p(&d.join("trg.vec")), "--gold", p(&d.join("gold.txt")),
        "--retrieval", "nn", "--ks", "1,2", "--compare", p(&base), "--name", "mine",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("mine.1=0.5"), "{stdout}");
    assert!(stdout.contains("+20.00"), "{stdout}");
    assert!(stdout.contains("+50.00"), "{stdout}");
}
