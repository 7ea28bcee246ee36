//! End-to-end checks of the `bioaudit` binary against bundled fixtures.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bioaudit::corpus::{read_jsonl, ExtractionStats};
use bioaudit::report::{read_csv, read_json, CandidateCsvRow, GapCsvRow, TraceCsvRow};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn bioaudit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bioaudit"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = bioaudit(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn extract_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = data("mini_corpus.txt");
    let lexicon = data("mini_lexicon.tsv");
    let out = bioaudit(
        dir.path(),
        &["--out", "o", "extract", corpus.to_str().unwrap(), "--lexicon", lexicon.to_str().unwrap()],
    );
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("skipped 1 lines"));
    let got = std::fs::read(dir.path().join("o/biographies.jsonl")).unwrap();
    assert_eq!(got, std::fs::read(data("mini_golden.jsonl")).unwrap());

    let (_, stats): (_, ExtractionStats) = read_json(&dir.path().join("o/extraction_stats.json")).unwrap();
    assert_eq!((stats.lines, stats.malformed_utf8, stats.extracted, stats.duplicates_removed), (14, 1, 6, 3));
    let discarded: Vec<usize> = stats.discarded.values().copied().collect();
    assert_eq!(discarded, [3, 1]);
    assert_eq!(stats.per_occupation["professor"], 2);
    assert_eq!(read_jsonl(&dir.path().join("o/biographies.jsonl")).unwrap().len(), 6);
}

#[test]
fn empty_input_gives_empty_output() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.txt"), "").unwrap();
    ok(dir.path(), &["--out", "o", "extract", "empty.txt"]);
    assert!(std::fs::read(dir.path().join("o/biographies.jsonl")).unwrap().is_empty());
    let (_, stats): (_, ExtractionStats) = read_json(&dir.path().join("o/extraction_stats.json")).unwrap();
    assert_eq!(stats, ExtractionStats::default());
}

#[test]
fn audit_matches_golden_gap_table() {
    let dir = tempfile::tempdir().unwrap();
    let preds = data("golden_predictions.csv");
    ok(dir.path(), &["--out", "o", "audit", "--predictions", preds.to_str().unwrap()]);
    let text = std::fs::read_to_string(dir.path().join("o/audit/gap_table.csv")).unwrap();
    let (header, body) = text.split_once('\n').unwrap();
    assert!(header.starts_with("# schema_version=1 config_hash="));
    assert!(header.ends_with(" seed=1"));
    assert_eq!(body, std::fs::read_to_string(data("golden_gap_table.csv")).unwrap());
    let (_, rows): (_, Vec<GapCsvRow>) = read_csv(&dir.path().join("o/audit/gap_table.csv")).unwrap();
    assert_eq!(rows.len(), 3);
}

#[test]
fn exit_codes_follow_error_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let code = |args: &[&str]| bioaudit(d, args).status.code();
    assert_eq!(code(&["train", "--representation", "lstm"]), Some(2));
    assert_eq!(code(&["split", "--corpus", "missing.jsonl"]), Some(2));
    std::fs::write(d.join("bad.toml"), "seed = \"x\"\n").unwrap();
    assert_eq!(code(&["--config", "bad.toml", "simulate"]), Some(2));
    std::fs::write(d.join("bad.jsonl"), "{not json}\n").unwrap();
    assert_eq!(code(&["split", "--corpus", "bad.jsonl"]), Some(3));
    // A gap of -0.9 leaves no feasible TPR on the default grid.
    assert_eq!(code(&["--out", "o", "simulate", "--slope", "0", "--intercept", "-0.9"]), Some(4));
    assert_eq!(code(&["--out", "o", "simulate", "--slope", "0.5", "--intercept", "-0.3"]), Some(0));
}

#[test]
fn zero_regression_simulation_is_flat() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["--out", "o", "simulate", "--slope", "0", "--intercept", "0"]);
    let (prov, rows): (_, Vec<TraceCsvRow>) = read_csv(&dir.path().join("o/simulate/trace.csv")).unwrap();
    assert_eq!(prov.schema_version, 1);
    assert_eq!(rows.len(), 4 * 11);
    assert!(rows.iter().all(|r| r.central == r.pi0 && r.band_lo == r.pi0 && r.band_hi == r.pi0));
}

#[test]
fn proxy_with_zero_k_lists_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("run.toml"),
        "[paths]\ncorpus = \"o/biographies.jsonl\"\nembeddings = \"o/embeddings.txt\"\noutput = \"o\"\n\
         [model.dnn]\nhidden = 3\nattention = 3\nepochs = 1\n[probe]\nmin_per_cell = 3\nper_cell_train = 3\n[proxy]\nruns = 1\n",
    )
    .unwrap();
    ok(d, &["--config", "run.toml", "synth", "--records-per-occupation", "40"]);
    ok(d, &["--config", "run.toml", "extract", "o/raw.txt", "--lexicon", "o/lexicon.tsv"]);
    ok(d, &["--config", "run.toml", "proxy", "--k", "0"]);
    let (_, rows): (_, Vec<CandidateCsvRow>) = read_csv(&d.join("o/proxy/candidates.csv")).unwrap();
    assert!(rows.is_empty());
    assert!(!d.join("o/proxy/histograms_women.csv").exists());
}
