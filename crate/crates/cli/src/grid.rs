//! Experiment grid: {no balancing, joint balancing} x MMD strengths x
//! replicate seeds. Completed cells are recorded in a manifest so an
//! interrupted grid resumes without duplicating rows.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use balancelab::balancing::Mechanism;
use balancelab::experiment::{run, RunResult, RunSpec};
use balancelab::learner::TrainSpec;
use balancelab::metrics::MetricsReport;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{ExperimentConfig, TestSet};
use crate::output::{write_atomic, write_json, Outputs};
use crate::Usage;

pub const RESULTS: &str = "results.csv";
pub const MANIFEST: &str = "manifest.json";

const SET_METRICS: [&str; 7] = ["accuracy", "worst_group", "worst_z", "equalized_odds", "dp_gap", "pp_gap", "logloss"];

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub balance: Option<Mechanism>,
    pub strength: f64,
    pub seed: u64,
}

impl Cell {
    pub fn arm(&self) -> &'static str {
        if self.balance.is_some() {
            "joint"
        } else {
            "none"
        }
    }

    /// Unique, filename-safe identifier.
    pub fn key(&self) -> String {
        format!("{}_mmd{}_seed{}", self.arm(), self.strength, self.seed)
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Manifest {
    config_hash: String,
    completed: BTreeSet<String>,
}

pub fn cells(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<Cell>> {
    let joint = cfg.joint_mechanism()?;
    let mut out = Vec::new();
    for balance in [None, Some(joint)] {
        for &strength in &cfg.grid.strengths {
            for &seed in seeds {
                out.push(Cell { balance, strength, seed });
            }
        }
    }
    Ok(out)
}

fn header() -> String {
    let mut cols: Vec<String> = ["cell", "graph", "balance", "mechanism", "mmd", "mmd_strength", "seed", "train_rows", "config_hash"]
        .map(String::from)
        .to_vec();
    for set in ["source", "balanced", "ideal"] {
        cols.extend(SET_METRICS.iter().map(|m| format!("{set}_{m}")));
    }
    cols.extend(["balanced_encoding", "shift_max_gap", "shift_mean_risk"].map(String::from));
    cols.join(",")
}

fn num(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

fn set_fields(r: &MetricsReport, on: bool) -> Vec<String> {
    let vals = [
        Some(r.accuracy),
        Some(r.worst_group),
        Some(r.worst_z),
        Some(r.equalized_odds),
        Some(r.dp_gap),
        r.pp_gap,
        Some(r.logloss),
    ];
    vals.iter().map(|v| num(v.filter(|_| on))).collect()
}

fn row(cfg: &ExperimentConfig, hash: &str, cell: &Cell, r: &RunResult) -> String {
    let has = |s| cfg.eval.sets.contains(&s);
    let mut f = vec![
        cell.key(),
        cfg.gen.graph.to_string(),
        cell.arm().into(),
        cell.balance.map_or_else(String::new, |m| format!("{m:?}")),
        if cell.strength == 0.0 { "none".into() } else { format!("{:?}", cfg.grid.mmd).to_lowercase() },
        format!("{}", cell.strength),
        cell.seed.to_string(),
        r.train_rows.to_string(),
        hash.into(),
    ];
    f.extend(set_fields(&r.source, has(TestSet::Source)));
    f.extend(set_fields(&r.balanced, has(TestSet::Balanced)));
    f.extend(set_fields(&r.ideal, has(TestSet::Ideal)));
    f.push(num(r.balanced.encoding.filter(|_| has(TestSet::Balanced))));
    f.push(num(r.shift_risk.as_ref().map(|s| s.max_gap)));
    f.push(num(r.shift_risk.as_ref().map(|s| s.risks.iter().sum::<f64>() / s.risks.len() as f64)));
    f.join(",")
}

fn run_cell(cfg: &ExperimentConfig, cell: &Cell) -> Result<RunResult> {
    let spec = RunSpec {
        balance: cell.balance,
        train: TrainSpec {
            mmd: cfg.grid.regularizer(cell.strength),
            ..cfg.train.clone()
        },
        ..cfg.run_spec()
    };
    run(&spec, cell.seed).with_context(|| format!("cell {}", cell.key()))
}

/// Keys already present in the results table.
fn recorded_keys(text: &str) -> BTreeSet<String> {
    text.lines()
        .skip(1)
        .filter_map(|l| l.split(',').next())
        .filter(|k| !k.is_empty())
        .map(String::from)
        .collect()
}

pub fn cmd_grid(cfg: &ExperimentConfig, seed: Option<u64>, workers: usize, out: Outputs) -> Result<ExitCode> {
    let hash = cfg.hash();
    let seeds = cfg.seeds(seed);
    let all = cells(cfg, &seeds)?;
    let (results_path, manifest_path, cell_dir) = (out.path(RESULTS), out.path(MANIFEST), out.path("cells"));
    if out.force {
        for p in [&results_path, &manifest_path] {
            if p.exists() {
                fs::remove_file(p)?;
            }
        }
        if cell_dir.exists() {
            fs::remove_dir_all(&cell_dir)?;
        }
    }
    let mut manifest: Manifest = if manifest_path.exists() {
        serde_json::from_str(&fs::read_to_string(&manifest_path)?).context("reading manifest")?
    } else {
        Manifest {
            config_hash: hash.clone(),
            ..Manifest::default()
        }
    };
    if manifest.config_hash != hash {
        return Err(Usage::new(format!(
            "{} belongs to a grid with a different config (pass --force to start over)",
            out.dir.display()
        ))
        .into());
    }
    if results_path.exists() {
        let text = fs::read_to_string(&results_path)?;
        if text.lines().next() != Some(header().as_str()) {
            bail!("{} has an unexpected header", results_path.display());
        }
        // rows appended before an interruption reached the manifest
        manifest.completed.extend(recorded_keys(&text));
    } else {
        write_atomic(&results_path, format!("{}\n", header()).as_bytes())?;
    }
    fs::create_dir_all(&cell_dir)?;
    write_json(&manifest_path, &manifest)?;
    let todo: Vec<&Cell> = all.iter().filter(|c| !manifest.completed.contains(&c.key())).collect();
    println!("{} cells, {} already complete, {} to run", all.len(), all.len() - todo.len(), todo.len());

    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    // chunks keep the row order independent of the worker count
    for chunk in todo.chunks(workers.max(1) * 2) {
        let results: Vec<Result<RunResult>> = pool.install(|| chunk.par_iter().map(|c| run_cell(cfg, c)).collect());
        let mut file = fs::OpenOptions::new().append(true).open(&results_path)?;
        for (cell, r) in chunk.iter().zip(results) {
            let r = r?;
            write_json(&cell_dir.join(format!("{}.json", cell.key())), &json!({"config_hash": hash, "result": r}))?;
            writeln!(file, "{}", row(cfg, &hash, cell, &r))?;
            file.sync_data()?;
            manifest.completed.insert(cell.key());
            write_json(&manifest_path, &manifest)?;
            println!("done {}", cell.key());
        }
    }
    write_plots(cfg, &hash, &all, &out)?;
    println!("results: {}", results_path.display());
    Ok(ExitCode::SUCCESS)
}

fn load_cell(out: &Outputs, cell: &Cell) -> Result<RunResult> {
    #[derive(Deserialize)]
    struct Stored {
        result: RunResult,
    }
    let p = out.path("cells").join(format!("{}.json", cell.key()));
    let s: Stored = serde_json::from_str(&fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?)?;
    Ok(s.result)
}

/// Plot-ready x,y,series tables: metrics against MMD strength (one series
/// per arm and test set) and accuracy across the shift grid (one series per
/// arm and strength). Values are means over replicates.
fn write_plots(cfg: &ExperimentConfig, hash: &str, all: &[Cell], out: &Outputs) -> Result<()> {
    let dir = out.path("plots");
    fs::create_dir_all(&dir)?;
    let mut sweep: BTreeMap<(String, u64), (f64, f64, usize)> = BTreeMap::new();
    let mut shift: BTreeMap<(String, u64), (f64, f64, usize)> = BTreeMap::new();
    let add = |m: &mut BTreeMap<(String, u64), (f64, f64, usize)>, series: String, x: f64, y: f64| {
        let e = m.entry((series, x.to_bits())).or_insert((x, 0.0, 0));
        e.1 += y;
        e.2 += 1;
    };
    for cell in all {
        let r = load_cell(out, cell)?;
        let sets = [(TestSet::Source, "source", &r.source), (TestSet::Balanced, "balanced", &r.balanced), (TestSet::Ideal, "ideal", &r.ideal)];
        for (t, name, rep) in sets {
            if cfg.eval.sets.contains(&t) {
                for (metric, v) in [("accuracy", rep.accuracy), ("worst_group", rep.worst_group), ("equalized_odds", rep.equalized_odds)] {
                    add(&mut sweep, format!("{}/{name}/{metric}", cell.arm()), cell.strength, v);
                }
            }
        }
        for (t, rep) in cfg.eval.shift_points.iter().zip(&r.shifts) {
            add(&mut shift, format!("{}/mmd={}", cell.arm(), cell.strength), *t, rep.accuracy);
        }
    }
    for (name, table) in [("mmd_sweep.csv", sweep), ("shift_accuracy.csv", shift)] {
        if table.is_empty() {
            continue;
        }
        let mut text = String::from("x,y,series\n");
        let mut rows: Vec<_> = table.into_iter().map(|((s, _), (x, y, n))| (s, x, y / n as f64)).collect();
        rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        for (s, x, y) in rows {
            writeln!(text, "{x},{y},{s}")?;
        }
        let path = dir.join(name);
        write_atomic(&path, text.as_bytes())?;
        write_json(&balancelab::datagen::meta_path(&path), &json!({"config_hash": hash}))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_count_is_the_cross_product() {
        let cfg = ExperimentConfig::parse("replicates = [0, 1, 2]\n[grid]\nstrengths = [0.0, 4.0]\n").unwrap();
        let c = cells(&cfg, &cfg.seeds(None)).unwrap();
        assert_eq!(c.len(), 12);
        let keys: BTreeSet<String> = c.iter().map(Cell::key).collect();
        assert_eq!(keys.len(), 12);
    }

    #[test]
    fn header_is_fixed() {
        assert_eq!(header().split(',').count(), 9 + 3 * SET_METRICS.len() + 3);
        assert!(header().starts_with("cell,"));
    }

    #[test]
    fn recorded_keys_skip_header() {
        let t = format!("{}\na_mmd0_seed1,A\n\nb,B\n", header());
        assert_eq!(recorded_keys(&t), ["a_mmd0_seed1", "b"].map(String::from).into());
    }
}
