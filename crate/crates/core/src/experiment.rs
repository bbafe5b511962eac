//! One cell of a balancing-versus-regularization experiment: generate
//! training data, optionally balance it, train, and score the model on
//! source, balanced, ideal and shifted test sets.

use serde::{Deserialize, Serialize};

use crate::balancing::{BalanceSpec, Mechanism, Target};
use crate::datagen::{
    balanced_testset, generate, ideal_testset, shift_testsets, symmetric_grid, Dataset, GenSpec,
};
use crate::error::Result;
use crate::learner::{probe_encoding, train, ModelParams, ProbeTarget, TrainLog, TrainSpec};
use crate::metrics::{evaluate, risk_invariance_report, MetricsReport, RiskLoss, RiskReport};
use crate::propcheck::default_grid_points;
use crate::rng::derive_seed;

/// Sub-seed indices derived from a replicate seed.
pub mod seeds {
    pub const GEN: u64 = 0;
    pub const TRAIN: u64 = 1;
    pub const BALANCE: u64 = 2;
    pub const SOURCE: u64 = 3;
    pub const BALANCED: u64 = 4;
    pub const IDEAL: u64 = 5;
    pub const SHIFT: u64 = 6;
    pub const PROBE: u64 = 7;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSpec {
    pub gen: GenSpec,
    /// joint (Y, Z) balancing of the training set
    pub balance: Option<Mechanism>,
    pub train: TrainSpec,
    pub test_n: usize,
    /// P'(Z=0|Y=0) of each shifted test set, with P'(Z=0|Y=1) = 1 - t
    pub shift_points: Vec<f64>,
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec {
            gen: GenSpec::default(),
            balance: None,
            train: TrainSpec::default(),
            test_n: 2_000,
            shift_points: default_grid_points(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub train_rows: usize,
    /// test set from P*
    pub source: MetricsReport,
    /// test set from the jointly balanced Q; carries the encoding probe
    pub balanced: MetricsReport,
    pub ideal: MetricsReport,
    pub shifts: Vec<MetricsReport>,
    /// zero-one risk across the shifted test sets
    pub shift_risk: Option<RiskReport>,
    pub log: TrainLog,
}

/// Training data of one replicate, balanced if requested.
pub fn training_set(spec: &RunSpec, seed: u64) -> Result<Dataset> {
    let gen = GenSpec {
        seed: derive_seed(seed, seeds::GEN),
        ..spec.gen.clone()
    };
    let data = generate(&gen)?;
    match spec.balance {
        None => Ok(data),
        Some(m) => {
            let s = m.resamples().then(|| derive_seed(seed, seeds::BALANCE));
            data.balance(&BalanceSpec::new(Target::joint("Y", "Z"), m, s)?)
        }
    }
}

/// Run one replicate. Every random choice is derived from `seed`, so test
/// sets coincide across cells that share it.
pub fn run(spec: &RunSpec, seed: u64) -> Result<RunResult> {
    let data = training_set(spec, seed)?;
    let tspec = TrainSpec {
        seed: derive_seed(seed, seeds::TRAIN),
        ..spec.train.clone()
    };
    let (model, log) = train(&data, &tspec)?;
    evaluate_run(spec, seed, &model, data.len(), log)
}

fn evaluate_run(spec: &RunSpec, seed: u64, model: &ModelParams, train_rows: usize, log: TrainLog) -> Result<RunResult> {
    let g = &spec.gen;
    let n = spec.test_n;
    let source = evaluate(model, &generate(&GenSpec { n, seed: derive_seed(seed, seeds::SOURCE), ..g.clone() })?, 0.5)?;
    let q = balanced_testset(g, n, derive_seed(seed, seeds::BALANCED))?;
    let mut balanced = evaluate(model, &q, 0.5)?;
    balanced.encoding = Some(probe_encoding(model, &q, ProbeTarget::Z, derive_seed(seed, seeds::PROBE))?);
    let ideal = evaluate(model, &ideal_testset(g, n, derive_seed(seed, seeds::IDEAL))?, 0.5)?;
    let (shifts, shift_risk) = if spec.shift_points.is_empty() {
        (Vec::new(), None)
    } else {
        let sets = shift_testsets(g, &symmetric_grid(&spec.shift_points), n, derive_seed(seed, seeds::SHIFT))?;
        let reports = sets.iter().map(|d| evaluate(model, d, 0.5)).collect::<Result<Vec<_>>>()?;
        let risk = if sets.len() >= 2 {
            Some(risk_invariance_report(model, &sets, RiskLoss::ZeroOne)?)
        } else {
            None
        };
        (reports, risk)
    };
    Ok(RunResult {
        seed,
        train_rows,
        source,
        balanced,
        ideal,
        shifts,
        shift_risk,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cbn::templates::GraphId;

    fn small(graph: GraphId, balance: Option<Mechanism>) -> RunSpec {
        RunSpec {
            gen: GenSpec {
                n: 3_000,
                ..GenSpec::for_graph(graph)
            },
            balance,
            train: TrainSpec {
                epochs: 5,
                ..TrainSpec::default()
            },
            test_n: 500,
            shift_points: vec![0.1, 0.5, 0.9],
        }
    }

    #[test]
    fn run_is_deterministic() {
        let spec = small(GraphId::A, Some(Mechanism::SubsampleMajority));
        let a = run(&spec, 4).unwrap();
        assert_eq!(a, run(&spec, 4).unwrap());
        assert_eq!(a.shifts.len(), 3);
        assert!(a.train_rows < 3_000);
    }

    #[test]
    fn every_graph_runs() {
        for g in GraphId::ALL {
            let r = run(&small(g, None), 1).unwrap();
            assert!(r.source.accuracy > 0.6, "{g}: {}", r.source.accuracy);
            assert!(r.balanced.encoding.is_some());
        }
    }
}
