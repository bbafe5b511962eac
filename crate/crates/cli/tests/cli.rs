use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use balancelab::datagen::Dataset;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_balancelab"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("exp.toml");
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_matches_source_conditionals_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "replicates = [3]\n[gen]\ngraph = \"A\"\n[eval]\nsets = [\"ideal\"]\ntest_n = 500\n");
    let out = dir.path().join("nested/data");
    let o = run(&["gen", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let train = out.join("seed-3/train.csv");
    let (d, meta) = Dataset::load(&train).unwrap();
    assert_eq!(meta.config_hash.as_ref().map(String::len), Some(64));
    for (z, p) in [(0u8, 0.95), (1u8, 0.10)] {
        let rows: Vec<usize> = (0..d.len()).filter(|&i| d.z()[i] == z).collect();
        let n = rows.len() as f64;
        let hat = rows.iter().filter(|&&i| d.y()[i] == 0).count() as f64 / n;
        let se = (p * (1.0 - p) / n).sqrt();
        assert!((hat - p).abs() < 3.0 * se, "P(Y=0|Z={z}) = {hat}, expected {p} ± {}", 3.0 * se);
    }
    let first = fs::read(&train).unwrap();
    let ideal = fs::read(out.join("seed-3/ideal.csv")).unwrap();

    let again = run(&["gen", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&again), 2, "overwrite without --force must be refused");
    let forced = run(&["gen", "--config", s(&cfg), "--out", s(&out), "--force"]);
    assert_eq!(code(&forced), 0);
    assert_eq!(fs::read(&train).unwrap(), first);
    assert_eq!(fs::read(out.join("seed-3/ideal.csv")).unwrap(), ideal);
}

#[test]
fn verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    let o = run(&["verify", "prop4-C2", "--out", out]);
    assert_eq!(code(&o), 0);
    let report = fs::read_to_string(dir.path().join("verify-prop4-C2.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert!(v["outcome"]["report"]["violations"].as_array().is_some_and(|a| !a.is_empty()));
    assert_eq!(v["config_hash"].as_str().map(str::len), Some(64));

    assert_eq!(code(&run(&["verify", "appendixA1-bound", "--grid", "50", "--out", out])), 0);
    let r: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("verify-appendixA1-bound.json")).unwrap()).unwrap();
    assert_eq!(r["outcome"]["report"]["violations"], 0);

    assert_eq!(code(&run(&["verify", "prop9", "--out", out])), 2);
    assert_eq!(code(&run(&["verify", "prop4-C4", "--out", out])), 3);
    assert_eq!(code(&run(&["verify", "prop4-C2", "--out", out])), 2, "existing report needs --force");
    assert_eq!(code(&run(&["verify", "prop4-C2", "--out", out, "--force", "--seed", "4"])), 0);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "[train]\nepoch = 3\n");
    assert_eq!(code(&run(&["gen", "--config", s(&bad)])), 2);
    assert_eq!(code(&run(&["gen"])), 2, "gen needs a config");
    assert_eq!(code(&run(&["frobnicate"])), 2);
    assert_eq!(code(&run(&["train"])), 2, "missing positional");
    let missing = dir.path().join("nope.csv");
    assert_eq!(code(&run(&["train", s(&missing), "--out", s(dir.path())])), 1);
}

#[test]
fn balance_train_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[gen]\ngraph = \"D\"\nn = 3000\n[balance]\nmechanism = \"subsample\"\n[train]\nepochs = 4\n[eval]\nsets = [\"source\", \"ideal\"]\ntest_n = 400\n",
    );
    let c = s(&cfg);
    let data = dir.path().join("data");
    assert_eq!(code(&run(&["gen", "--config", c, "--out", s(&data)])), 0);
    let train = data.join("seed-0/train.csv");
    let bal_dir = dir.path().join("bal");
    assert_eq!(code(&run(&["balance", s(&train), "--config", c, "--out", s(&bal_dir)])), 0);
    let balanced = bal_dir.join("train.balanced.csv");
    let (q, _) = Dataset::load(&balanced).unwrap();
    let count = |y: u8, z: u8| (0..q.len()).filter(|&i| q.y()[i] == y && q.z()[i] == z).count() as f64;
    // subsampling leaves Y and Z exactly independent in cell counts, up to rounding
    let n = q.len() as f64;
    let gap = (count(0, 0) / n - (count(0, 0) + count(0, 1)) / n * (count(0, 0) + count(1, 0)) / n).abs();
    assert!(gap < 2.0 / n, "{gap}");

    let model_dir = dir.path().join("model");
    assert_eq!(code(&run(&["train", s(&balanced), "--config", c, "--out", s(&model_dir)])), 0);
    for f in ["model.txt", "train_log.csv", "model.json"] {
        assert!(model_dir.join(f).exists(), "{f}");
    }
    let eval_dir = dir.path().join("eval");
    let o = run(&[
        "eval",
        s(&model_dir.join("model.txt")),
        s(&data.join("seed-0/source.csv")),
        s(&data.join("seed-0/ideal.csv")),
        "--config",
        c,
        "--out",
        s(&eval_dir),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(eval_dir.join("metrics.json")).unwrap()).unwrap();
    assert!(m["reports"]["ideal"]["accuracy"].as_f64().unwrap() > 0.5);
    assert!(m["risk"]["max_gap"].is_number());
}

fn grid_config(dir: &Path, strengths: &str) -> PathBuf {
    write_config(
        dir,
        &format!(
            "replicates = [0, 1, 2]\n[gen]\ngraph = \"A\"\nn = 1500\n[train]\nepochs = 2\n[eval]\ntest_n = 300\nshift_points = [0.1, 0.5, 0.9]\n[grid]\nstrengths = {strengths}\n"
        ),
    )
}

fn rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(String::from).collect()
}

#[test]
fn grid_counts_resumes_and_is_worker_independent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = grid_config(dir.path(), "[0.0, 4.0]");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = run(&["grid", "--config", s(&cfg), "--out", s(&a)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let results = a.join("results.csv");
    assert_eq!(rows(&results).len(), 12);
    assert!(a.join("plots/mmd_sweep.csv").exists());
    let shift = fs::read_to_string(a.join("plots/shift_accuracy.csv")).unwrap();
    assert!(shift.starts_with("x,y,series\n"));
    assert_eq!(shift.lines().count(), 1 + 4 * 3);

    // rerun resumes with nothing left to do
    let before = fs::read(&results).unwrap();
    assert_eq!(code(&run(&["grid", "--config", s(&cfg), "--out", s(&a)])), 0);
    assert_eq!(fs::read(&results).unwrap(), before);

    // a lost manifest is rebuilt from the table
    fs::remove_file(a.join("manifest.json")).unwrap();
    assert_eq!(code(&run(&["grid", "--config", s(&cfg), "--out", s(&a)])), 0);
    assert_eq!(rows(&results).len(), 12);

    // an interrupted run: drop the last two rows and their manifest entries
    let mut kept = fs::read_to_string(&results).unwrap().lines().map(String::from).collect::<Vec<_>>();
    kept.truncate(kept.len() - 2);
    fs::write(&results, kept.join("\n") + "\n").unwrap();
    fs::remove_file(a.join("manifest.json")).unwrap();
    assert_eq!(code(&run(&["grid", "--config", s(&cfg), "--out", s(&a)])), 0);
    assert_eq!(fs::read(&results).unwrap(), before);

    assert_eq!(code(&run(&["grid", "--config", s(&cfg), "--out", s(&b), "--workers", "3"])), 0);
    assert_eq!(fs::read(b.join("results.csv")).unwrap(), before);

    let sub = dir.path().join("other");
    fs::create_dir_all(&sub).unwrap();
    let other = grid_config(&sub, "[0.0, 8.0]");
    assert_eq!(code(&run(&["grid", "--config", s(&other), "--out", s(&a)])), 2);
    assert_eq!(code(&run(&["grid", "--config", s(&other), "--out", s(&a), "--force"])), 0);
    assert!(rows(&results).iter().all(|r| !r.contains("_mmd4_")));
}
