use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use emoc_core::{Strategy, Tensor};
use emoc_harness::cifar::{encode_record, write_records};
use emoc_harness::export::summary_path;
use emoc_harness::{read_results, ExperimentConfig, DATA_DIR_ENV};

const SMALL: &str = r#"
[synthetic]
num_classes = 4
feature_dim = 3
samples_per_class = 12
test_per_class = 3

[protocol]
num_known_classes = 2
num_novel_classes = 2
initial_per_class = 3
pool_per_class = 4
num_initializations = 2

[selection]
set_size = 2
num_sets = 4
eval_subset_size = 3

[training]
initial_iterations = 20
iterations_per_update = 5

[network]
hidden = [4]
"#;

fn emoc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emoc")).args(args).env_remove(DATA_DIR_ENV).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    fs::write(&path, SMALL).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("r.csv");
    let stdout = ok(&emoc(&[
        "run", "--synthetic", "--config", &cfg, "--seeds", "0,1", "--steps", "3", "--out", out.to_str().unwrap(),
    ]));
    assert!(stdout.contains("emoc"));
    let records = read_results(&out).unwrap();
    assert!(records.iter().all(|r| r.strategy == Strategy::Emoc));
    for seed in [0, 1] {
        let counts: Vec<usize> = records.iter().filter(|r| r.seed == seed).map(|r| r.labeled_count).collect();
        assert_eq!(counts, [6, 8, 10, 12]);
    }
    assert!(summary_path(&out).exists());
}

#[test]
fn flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("budget.toml");
    fs::write(&path, SMALL.replace("num_initializations = 2", "num_initializations = 2\nsteps_budget = 1")).unwrap();
    let cfg = path.to_str().unwrap();
    let out = dir.path().join("a.csv");
    ok(&emoc(&["run", "--synthetic", "--config", cfg, "--out", out.to_str().unwrap()]));
    let records = read_results(&out).unwrap();
    // File budget, default seeds from num_initializations.
    assert_eq!(records.len(), 2 * 2);
    ok(&emoc(&["run", "--synthetic", "--config", cfg, "--steps", "2", "--seeds", "5", "--out", out.to_str().unwrap()]));
    let records = read_results(&out).unwrap();
    assert_eq!(records.len(), 3);
    assert!(records.iter().all(|r| r.seed == 5));
}

#[test]
fn compare_shares_the_start_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&emoc(&[
            "compare", "--synthetic", "--config", &cfg, "--seeds", "0..2", "--steps", "2",
            "--strategies", "random,max", "--out", out.to_str().unwrap(),
        ]));
        out
    };
    let (a, b) = (run("a.csv"), run("b.csv"));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let records = read_results(&a).unwrap();
    assert_eq!(records.len(), 2 * 2 * 3);
    let strategies: Vec<Strategy> = records.iter().map(|r| r.strategy).collect();
    assert_eq!(&strategies[..6], [Strategy::Random; 6]);
    assert_eq!(&strategies[6..], [Strategy::Max; 6]);
    for seed in [0, 1] {
        let first: Vec<_> = records.iter().filter(|r| r.seed == seed && r.labeled_count == 6).collect();
        assert_eq!(first.len(), 2);
        assert_eq!(first[0].accuracy_pct, first[1].accuracy_pct);
    }
}

#[test]
fn data_directory_comes_from_the_environment() {
    let data = tempfile::tempdir().unwrap();
    let record = |class: usize, k: usize| {
        let v = (0..3072).map(|i| ((class * 40 + k * 7 + i % 13) % 256) as f64 / 255.0).collect();
        encode_record(&Tensor::new(vec![3, 32, 32], v).unwrap(), 0, class as u8).unwrap()
    };
    let train: Vec<_> = (0..4).flat_map(|c| (0..4).map(move |k| record(c, k))).collect();
    let test: Vec<_> = (0..4).map(|c| record(c, 9)).collect();
    write_records(&data.path().join("train.bin"), &train).unwrap();
    write_records(&data.path().join("test.bin"), &test).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("img.toml");
    fs::write(
        &cfg,
        r#"
[protocol]
num_known_classes = 2
num_novel_classes = 2
initial_per_class = 2
pool_per_class = 2
[selection]
set_size = 2
num_sets = 2
eval_subset_size = 2
[training]
initial_iterations = 2
iterations_per_update = 1
[network]
layers = [
    { kind = "max_pool2d", window = 8 },
    { kind = "fully_connected", inputs = 48, outputs = 100 },
    { kind = "softmax" },
]
"#,
    )
    .unwrap();
    let out = dir.path().join("img.csv");
    let status = Command::new(env!("CARGO_BIN_EXE_emoc"))
        .args(["run", "--strategy", "random", "--seeds", "3", "--config", cfg.to_str().unwrap()])
        .args(["--out", out.to_str().unwrap()])
        .env(DATA_DIR_ENV, data.path())
        .output()
        .unwrap();
    ok(&status);
    let records = read_results(&out).unwrap();
    assert_eq!(records.len(), 1 + 4);
    assert_eq!(records.last().unwrap().labeled_count, 12);
}

#[test]
fn config_prints_the_preset() {
    let synthetic = ok(&emoc(&["config", "--synthetic"]));
    assert_eq!(ExperimentConfig::layered(&ExperimentConfig::paper(), &synthetic).unwrap(), ExperimentConfig::desk_scale());
    let paper = ok(&emoc(&["config", "--data", "/anywhere"]));
    assert_eq!(ExperimentConfig::layered(&ExperimentConfig::desk_scale(), &paper).unwrap(), ExperimentConfig::paper());
}

#[test]
fn bad_input_fails_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let out = out.to_str().unwrap();
    for args in [
        vec!["run", "--out", out],
        vec!["run", "--synthetic", "--seeds", "x", "--out", out],
        vec!["run", "--synthetic", "--strategy", "best", "--out", out],
        vec!["run", "--data", "/definitely/missing", "--out", out],
        vec!["run", "--synthetic", "--config", "/definitely/missing.toml", "--out", out],
    ] {
        let o = emoc(&args);
        assert!(!o.status.success(), "{args:?} succeeded");
        assert!(!o.stderr.is_empty());
    }
    assert!(!Path::new(out).exists());
}

#[test]
fn check_passes() {
    let stdout = ok(&emoc(&["check"]));
    assert_eq!(stdout.lines().filter(|l| l.ends_with("ok")).count(), 3, "{stdout}");
}
