use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use balancelab::datagen::{
    balanced_testset, generate, ideal_testset, shift_testsets, symmetric_grid, Dataset, DatasetMeta, GenSpec,
};
use balancelab::experiment::seeds;
use balancelab::learner::{probe_encoding, train, ModelParams, ProbeTarget, TrainSpec};
use balancelab::metrics::{evaluate, risk_invariance_report, MetricsReport, RiskLoss, RiskReport};
use balancelab::propcheck::suite::{self, VerifyOptions, IDS};
use balancelab::rng::derive_seed;
use serde::Serialize;
use serde_json::json;

use crate::config::{hash_json, ExperimentConfig, TestSet};
use crate::output::{write_atomic, write_json, Outputs};
use crate::{grid, Cli, Command, Usage};

pub fn dispatch(cli: Cli) -> Result<ExitCode> {
    let config = match &cli.config {
        Some(p) => Some(ExperimentConfig::load(p)?),
        None => None,
    };
    if cli.workers == 0 {
        return Err(Usage::new("--workers must be at least 1").into());
    }
    let out_dir = cli
        .out
        .clone()
        .or_else(|| config.as_ref().map(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"));
    let need = |what: &str| {
        config
            .clone()
            .ok_or_else(|| anyhow::Error::from(Usage::new(format!("`{what}` needs --config"))))
    };
    match &cli.command {
        Command::Gen => cmd_gen(&need("gen")?, cli.seed, Outputs::create(out_dir, cli.force)?),
        Command::Balance { data } => cmd_balance(&need("balance")?, data, cli.seed, Outputs::create(out_dir, cli.force)?),
        Command::Train { data } => cmd_train(config.as_ref(), data, cli.seed, Outputs::create(out_dir, cli.force)?),
        Command::Eval { model, data } => cmd_eval(config.as_ref(), model, data, cli.seed, Outputs::create(out_dir, cli.force)?),
        Command::Verify { id, grid } => cmd_verify(id, cli.seed.unwrap_or(0), *grid, &out_dir, cli.force),
        Command::Grid => grid::cmd_grid(&need("grid")?, cli.seed, cli.workers, Outputs::create(out_dir, cli.force)?),
    }
}

fn first_seed(cfg: Option<&ExperimentConfig>, seed: Option<u64>) -> u64 {
    seed.or_else(|| cfg.map(|c| c.replicates[0])).unwrap_or(0)
}

fn meta(kind: &str, spec: &GenSpec, data: &Dataset, conditional: Option<[f64; 2]>, hash: &str) -> DatasetMeta {
    DatasetMeta {
        kind: kind.into(),
        spec: Some(spec.clone()),
        channels: data.channels().to_vec(),
        conditional,
        config_hash: Some(hash.into()),
    }
}

/// Datasets of one replicate, drawn with the same sub-seeds as a grid cell.
fn replicate_sets(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<(String, Dataset, DatasetMeta)>> {
    let g = &cfg.gen;
    let n = cfg.eval.test_n;
    let hash = cfg.hash();
    let train_spec = GenSpec {
        seed: derive_seed(seed, seeds::GEN),
        ..g.clone()
    };
    let train = generate(&train_spec)?;
    let mut out = vec![("train".to_string(), meta("train", &train_spec, &train, None, &hash), train)];
    for set in &cfg.eval.sets {
        match set {
            TestSet::Source => {
                let s = GenSpec {
                    n,
                    seed: derive_seed(seed, seeds::SOURCE),
                    ..g.clone()
                };
                let d = generate(&s)?;
                out.push(("source".into(), meta("source", &s, &d, None, &hash), d));
            }
            TestSet::Balanced => {
                let d = balanced_testset(g, n, derive_seed(seed, seeds::BALANCED))?;
                let p = g.pz0_marginal();
                out.push(("balanced".into(), meta("balanced", g, &d, Some([p, p]), &hash), d));
            }
            TestSet::Ideal => {
                let d = ideal_testset(g, n, derive_seed(seed, seeds::IDEAL))?;
                out.push(("ideal".into(), meta("ideal", g, &d, None, &hash), d));
            }
            TestSet::ShiftGrid => {
                let grid = symmetric_grid(&cfg.eval.shift_points);
                let sets = shift_testsets(g, &grid, n, derive_seed(seed, seeds::SHIFT))?;
                for (k, (d, c)) in sets.into_iter().zip(grid).enumerate() {
                    let name = format!("shift-{k}");
                    out.push((name.clone(), meta(&name, g, &d, Some(c), &hash), d));
                }
            }
        }
    }
    Ok(out.into_iter().map(|(name, m, d)| (name, d, m)).collect())
}

fn cmd_gen(cfg: &ExperimentConfig, seed: Option<u64>, out: Outputs) -> Result<ExitCode> {
    for s in cfg.seeds(seed) {
        let sets = replicate_sets(cfg, s)?;
        let dir = Outputs::create(out.path(format!("seed-{s}")), out.force)?;
        let paths: Vec<PathBuf> = sets.iter().map(|(name, ..)| dir.path(format!("{name}.csv"))).collect();
        dir.claim(&paths)?;
        for ((_, d, m), p) in sets.iter().zip(&paths) {
            d.save(p, m)?;
        }
        println!("seed {s}: wrote {} datasets to {}", sets.len(), dir.dir.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned())
}

fn load(path: &Path) -> Result<(Dataset, DatasetMeta)> {
    Dataset::load(path).with_context(|| format!("loading {}", path.display()))
}

fn cmd_balance(cfg: &ExperimentConfig, data: &Path, seed: Option<u64>, out: Outputs) -> Result<ExitCode> {
    let b = cfg
        .balance
        .as_ref()
        .ok_or_else(|| Usage::new("`balance` needs a [balance] section in the config"))?;
    let seed = first_seed(Some(cfg), seed);
    let spec = b.spec(derive_seed(seed, seeds::BALANCE))?;
    let (d, m) = load(data)?;
    let target = out.path(format!("{}.balanced.csv", stem(data)));
    out.claim(std::slice::from_ref(&target))?;
    let q = d.balance(&spec)?;
    let meta = DatasetMeta {
        kind: format!("{}+balanced", m.kind),
        channels: q.channels().to_vec(),
        config_hash: Some(cfg.hash()),
        ..m
    };
    q.save(&target, &meta)?;
    println!("{} rows -> {} rows: {}", d.len(), q.len(), target.display());
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct ModelInfo<'a> {
    config_hash: Option<String>,
    data: String,
    rows: usize,
    train: &'a TrainSpec,
    bandwidth: Option<f64>,
    final_loss: Option<f64>,
}

fn cmd_train(cfg: Option<&ExperimentConfig>, data: &Path, seed: Option<u64>, out: Outputs) -> Result<ExitCode> {
    let base = cfg.map_or_else(TrainSpec::default, |c| c.train.clone());
    let spec = TrainSpec {
        seed: derive_seed(first_seed(cfg, seed), seeds::TRAIN),
        ..base
    };
    let (d, _) = load(data)?;
    let [model_path, log_path, info_path] = ["model.txt", "train_log.csv", "model.json"].map(|n| out.path(n));
    out.claim(&[model_path.clone(), log_path.clone(), info_path.clone()])?;
    let (model, log) = train(&d, &spec)?;
    write_atomic(&model_path, model.to_text().as_bytes())?;
    let mut buf = Vec::new();
    log.write_csv(&mut buf)?;
    write_atomic(&log_path, &buf)?;
    let info = ModelInfo {
        config_hash: cfg.map(ExperimentConfig::hash),
        data: data.display().to_string(),
        rows: d.len(),
        train: &spec,
        bandwidth: log.bandwidth,
        final_loss: log.last().map(|r| r.loss),
    };
    write_json(&info_path, &info)?;
    println!(
        "trained on {} rows, final loss {:.4}: {}",
        d.len(),
        info.final_loss.unwrap_or(f64::NAN),
        model_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct EvalOutput {
    config_hash: Option<String>,
    model: String,
    reports: BTreeMap<String, MetricsReport>,
    /// zero-one risk across all datasets
    risk: Option<RiskReport>,
}

fn cmd_eval(cfg: Option<&ExperimentConfig>, model: &Path, data: &[PathBuf], seed: Option<u64>, out: Outputs) -> Result<ExitCode> {
    let text = std::fs::read_to_string(model).with_context(|| format!("reading {}", model.display()))?;
    let params = ModelParams::from_text(&text)?;
    let threshold = cfg.map_or(0.5, |c| c.eval.threshold);
    let probe_seed = derive_seed(first_seed(cfg, seed), seeds::PROBE);
    let target = out.path("metrics.json");
    out.claim(std::slice::from_ref(&target))?;
    let mut reports = BTreeMap::new();
    let mut sets = Vec::new();
    for p in data {
        let (d, _) = load(p)?;
        let mut r = evaluate(&params, &d, threshold)?;
        r.encoding = probe_encoding(&params, &d, ProbeTarget::Z, probe_seed).ok();
        println!(
            "{:<16} n={:<6} acc={:.3} worst_group={:.3} eo={:.3} encoding={}",
            stem(p),
            r.n,
            r.accuracy,
            r.worst_group,
            r.equalized_odds,
            r.encoding.map_or("-".into(), |e| format!("{e:.3}"))
        );
        let mut name = stem(p);
        while reports.contains_key(&name) {
            name.push('+');
        }
        reports.insert(name, r);
        sets.push(d);
    }
    let risk = if sets.len() >= 2 {
        let r = risk_invariance_report(&params, &sets, RiskLoss::ZeroOne)?;
        println!("max zero-one risk gap across datasets: {:.4}", r.max_gap);
        Some(r)
    } else {
        None
    };
    write_json(
        &target,
        &EvalOutput {
            config_hash: cfg.map(ExperimentConfig::hash),
            model: model.display().to_string(),
            reports,
            risk,
        },
    )?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(id: &str, seed: u64, grid: Option<usize>, out_dir: &Path, force: bool) -> Result<ExitCode> {
    if !IDS.contains(&id) {
        return Err(Usage::new(format!("unknown verification id `{id}` (known: {})", IDS.join(", "))).into());
    }
    let out = Outputs::create(out_dir.to_path_buf(), force)?;
    let target = out.path(format!("verify-{id}.json"));
    out.claim(std::slice::from_ref(&target))?;
    let opts = VerifyOptions { seed, grid };
    let o = suite::run(id, &opts)?;
    let hash = hash_json(&json!({"id": id, "options": opts}));
    write_json(&target, &json!({"config_hash": hash, "outcome": o}))?;
    let verdict = if o.expectation_met { "confirmed" } else { "NOT observed" };
    println!("{id}: {verdict}: {}", o.expectation);
    Ok(if o.expectation_met { ExitCode::SUCCESS } else { ExitCode::from(3) })
}
