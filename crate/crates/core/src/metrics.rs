//! Fairness and robustness metrics of a scored, labeled dataset.
//!
//! Groups are the (Y, Z) cells. All averages use the dataset weights.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::learner::ModelParams;

/// Strata with fewer rows are left out of group metrics and reported.
pub const MIN_STRATUM: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub threshold: f64,
    /// score bins of the predictive-parity check
    pub pp_bins: usize,
    pub min_stratum: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            threshold: 0.5,
            pp_bins: 10,
            min_stratum: MIN_STRATUM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub accuracy: f64,
    /// min over retained (Y, Z) cells of thresholded accuracy, capped at
    /// `accuracy`
    pub worst_group: f64,
    /// (y, z) of the worst retained cell
    pub worst_cell: Option<(u8, u8)>,
    /// min over retained Z strata of thresholded accuracy
    pub worst_z: f64,
    /// ½ Σ_y (max_z - min_z) of E[f(X) | Z=z, Y=y]
    pub equalized_odds: f64,
    /// max_z - min_z of E[f(X) | Z=z]
    pub dp_gap: f64,
    /// max over score bins of the spread of P(Y=1 | bin, Z=z) across z
    pub pp_gap: Option<f64>,
    pub encoding: Option<f64>,
    /// weighted mean log-loss
    pub logloss: f64,
    /// group_counts[y][z]
    pub group_counts: [[usize; 2]; 2],
    /// group_accuracy[y][z], `None` for excluded cells
    pub group_accuracy: [[Option<f64>; 2]; 2],
    pub excluded: Vec<String>,
    pub flags: Vec<String>,
}

#[derive(Default, Clone, Copy)]
struct Acc {
    w: f64,
    correct: f64,
    score: f64,
    pos: f64,
    n: usize,
}

impl Acc {
    fn add(&mut self, w: f64, correct: bool, score: f64, y: u8) {
        self.w += w;
        self.correct += w * correct as u8 as f64;
        self.score += w * score;
        self.pos += w * y as f64;
        self.n += 1;
    }

    fn accuracy(&self) -> f64 {
        self.correct / self.w
    }

    fn mean_score(&self) -> f64 {
        self.score / self.w
    }

    fn rate(&self) -> f64 {
        self.pos / self.w
    }

    fn usable(&self, min: usize) -> bool {
        self.n >= min && self.w > 0.0
    }
}

fn spread(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

pub fn evaluate(params: &ModelParams, data: &Dataset, threshold: f64) -> Result<MetricsReport> {
    let scores = params.scores(data)?;
    evaluate_scores(
        &scores,
        data,
        &EvalOptions {
            threshold,
            ..EvalOptions::default()
        },
    )
}

/// Metrics of scores f(x_i) ∈ [0, 1] against the labels of `data`.
pub fn evaluate_scores(scores: &[f64], data: &Dataset, opts: &EvalOptions) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(Error::Argument("cannot evaluate on an empty dataset".into()));
    }
    if scores.len() != data.len() {
        return Err(Error::Argument("one score per row is required".into()));
    }
    if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
        return Err(Error::Argument("scores must lie in [0, 1]".into()));
    }
    if opts.pp_bins == 0 || opts.min_stratum == 0 {
        return Err(Error::Argument("pp_bins and min_stratum must be positive".into()));
    }
    let (y, z, w) = (data.y(), data.z(), data.weights());
    let mut all = Acc::default();
    let mut cells = [[Acc::default(); 2]; 2];
    let mut zs = [Acc::default(); 2];
    let mut bins = vec![[Acc::default(); 2]; opts.pp_bins];
    let mut logloss = 0.0;
    for i in 0..data.len() {
        let s = scores[i];
        let correct = (s >= opts.threshold) == (y[i] == 1);
        all.add(w[i], correct, s, y[i]);
        cells[y[i] as usize][z[i] as usize].add(w[i], correct, s, y[i]);
        zs[z[i] as usize].add(w[i], correct, s, y[i]);
        let b = ((s * opts.pp_bins as f64) as usize).min(opts.pp_bins - 1);
        bins[b][z[i] as usize].add(w[i], correct, s, y[i]);
        let p = s.clamp(1e-15, 1.0 - 1e-15);
        logloss -= w[i] * if y[i] == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    if all.w <= 0.0 {
        return Err(Error::Argument("dataset has zero total weight".into()));
    }
    let accuracy = all.accuracy();
    let mut excluded = Vec::new();
    let mut flags = Vec::new();

    let mut group_accuracy = [[None; 2]; 2];
    let mut worst_group = accuracy;
    let mut worst_cell = None;
    let mut eo = 0.0;
    for yv in 0..2 {
        let mut means = Vec::new();
        for zv in 0..2 {
            let c = &cells[yv][zv];
            if c.usable(opts.min_stratum) {
                let a = c.accuracy();
                group_accuracy[yv][zv] = Some(a);
                if a < worst_group || worst_cell.is_none() && a <= worst_group {
                    worst_group = a;
                    worst_cell = Some((yv as u8, zv as u8));
                }
                means.push(c.mean_score());
            } else {
                excluded.push(format!("Y={yv},Z={zv}"));
            }
        }
        if means.len() == 2 {
            eo += 0.5 * spread(&means);
        } else {
            flags.push(format!("equalized odds omits the Y={yv} stratum"));
        }
    }

    let usable_z: Vec<&Acc> = zs.iter().filter(|a| a.usable(opts.min_stratum)).collect();
    let worst_z = usable_z.iter().map(|a| a.accuracy()).fold(accuracy, f64::min);
    let dp_gap = if usable_z.len() == 2 {
        spread(&[zs[0].mean_score(), zs[1].mean_score()])
    } else {
        flags.push("demographic parity needs both Z values".into());
        0.0
    };

    let positives = y.iter().filter(|&&v| v == 1).count();
    let pp_gap = if positives == 0 || positives == y.len() {
        flags.push("predictive parity omitted: Y takes a single value".into());
        None
    } else {
        let gaps: Vec<f64> = bins
            .iter()
            .filter(|b| b.iter().all(|a| a.usable(opts.min_stratum)))
            .map(|b| (b[0].rate() - b[1].rate()).abs())
            .collect();
        if gaps.is_empty() {
            flags.push("predictive parity omitted: no score bin holds both Z values".into());
            None
        } else {
            Some(gaps.into_iter().fold(0.0, f64::max))
        }
    };

    Ok(MetricsReport {
        n: data.len(),
        accuracy,
        worst_group,
        worst_cell,
        worst_z,
        equalized_odds: eo,
        dp_gap,
        pp_gap,
        encoding: None,
        logloss: logloss / all.w,
        group_counts: [[cells[0][0].n, cells[0][1].n], [cells[1][0].n, cells[1][1].n]],
        group_accuracy,
        excluded,
        flags,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskLoss {
    ZeroOne,
    LogLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub risks: Vec<f64>,
    /// max pairwise difference of `risks`
    pub max_gap: f64,
}

/// Weighted risk of the model on every test set.
pub fn risk_invariance_report(params: &ModelParams, testsets: &[Dataset], loss: RiskLoss) -> Result<RiskReport> {
    if testsets.len() < 2 {
        return Err(Error::Argument("risk invariance needs at least two test sets".into()));
    }
    let risks = testsets
        .iter()
        .map(|d| {
            let r = evaluate(params, d, 0.5)?;
            Ok(match loss {
                RiskLoss::ZeroOne => 1.0 - r.accuracy,
                RiskLoss::LogLoss => r.logloss,
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(RiskReport {
        max_gap: spread(&risks),
        risks,
    })
}

/// Named reports flattened to `name.metric` keys, for tabular output.
pub fn flatten(reports: &[(&str, &MetricsReport)]) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for (name, r) in reports {
        let mut put = |k: &str, v: f64| {
            out.insert(format!("{name}.{k}"), v);
        };
        put("accuracy", r.accuracy);
        put("worst_group", r.worst_group);
        put("worst_z", r.worst_z);
        put("equalized_odds", r.equalized_odds);
        put("dp_gap", r.dp_gap);
        put("logloss", r.logloss);
        if let Some(v) = r.pp_gap {
            put("pp_gap", v);
        }
        if let Some(v) = r.encoding {
            put("encoding", v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::Channel;
    use crate::learner::{Activation, Layer};
    use proptest::prelude::*;

    fn labels(y: Vec<u8>, z: Vec<u8>) -> Dataset {
        let n = y.len();
        Dataset::new(y, z, None, vec![0.0; n], 1, None, vec![Channel::new("core", 0..1)]).unwrap()
    }

    fn opts(min: usize) -> EvalOptions {
        EvalOptions {
            min_stratum: min,
            ..EvalOptions::default()
        }
    }

    // Eight rows, two per cell.
    //   y z score  correct
    //   0 0 0.1    yes
    //   0 0 0.7    no
    //   0 1 0.2    yes
    //   0 1 0.4    yes
    //   1 0 0.9    yes
    //   1 0 0.6    yes
    //   1 1 0.3    no
    //   1 1 0.8    yes
    #[test]
    fn hand_computed_fixture() {
        let d = labels(vec![0, 0, 0, 0, 1, 1, 1, 1], vec![0, 0, 1, 1, 0, 0, 1, 1]);
        let s = [0.1, 0.7, 0.2, 0.4, 0.9, 0.6, 0.3, 0.8];
        let r = evaluate_scores(&s, &d, &opts(2)).unwrap();
        assert_eq!(r.accuracy, 6.0 / 8.0);
        // cells: (0,0) 1/2, (0,1) 1, (1,0) 1, (1,1) 1/2
        assert_eq!(r.worst_group, 0.5);
        assert_eq!(r.worst_cell, Some((0, 0)));
        // Z=0: 3/4, Z=1: 3/4
        assert_eq!(r.worst_z, 0.75);
        // Y=0: means .4 and .3; Y=1: .75 and .55
        assert!((r.equalized_odds - 0.5 * (0.1 + 0.2)).abs() < 1e-12);
        // E[f|Z=0] = .575, E[f|Z=1] = .425
        assert!((r.dp_gap - 0.15).abs() < 1e-12);
        let ll: f64 = -[0.9f64, 0.3, 0.8, 0.6, 0.9, 0.6, 0.3, 0.8].iter().map(|p| p.ln()).sum::<f64>() / 8.0;
        assert!((r.logloss - ll).abs() < 1e-12);
        assert_eq!(r.group_counts, [[2, 2], [2, 2]]);
        // only the 0.3 and 0.8 bins... none holds two rows of each Z
        assert_eq!(r.pp_gap, None);
    }

    #[test]
    fn perfect_classifier() {
        let y: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
        let z: Vec<u8> = (0..40).map(|i| ((i / 2) % 2) as u8).collect();
        let s: Vec<f64> = y.iter().map(|&v| v as f64).collect();
        let r = evaluate_scores(&s, &labels(y, z), &EvalOptions::default()).unwrap();
        assert_eq!((r.accuracy, r.worst_group, r.equalized_odds), (1.0, 1.0, 0.0));
    }

    #[test]
    fn scores_equal_to_z_give_unit_equalized_odds() {
        let y: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
        let z: Vec<u8> = (0..40).map(|i| ((i / 2) % 2) as u8).collect();
        let s: Vec<f64> = z.iter().map(|&v| v as f64).collect();
        let r = evaluate_scores(&s, &labels(y, z), &EvalOptions::default()).unwrap();
        assert_eq!(r.equalized_odds, 1.0);
        assert_eq!(r.worst_group, 0.0);
    }

    #[test]
    fn small_strata_are_excluded() {
        let d = labels(vec![0, 0, 0, 0, 0, 1], vec![0, 0, 0, 0, 0, 1]);
        let r = evaluate_scores(&[0.1; 6], &d, &EvalOptions::default()).unwrap();
        assert!(r.excluded.contains(&"Y=1,Z=1".to_string()));
        assert!(r.worst_group <= r.accuracy);
        assert!(!r.flags.is_empty());
    }

    #[test]
    fn single_class_omits_predictive_parity() {
        let d = labels(vec![1; 12], (0..12).map(|i| (i % 2) as u8).collect());
        let r = evaluate_scores(&[0.6; 12], &d, &EvalOptions::default()).unwrap();
        assert_eq!(r.pp_gap, None);
        assert!(r.flags.iter().any(|f| f.contains("predictive parity")));
    }

    #[test]
    fn constant_predictor_risk_is_flat() {
        let model = ModelParams {
            layers: vec![Layer::zeros(1, 1)],
            activation: Activation::Relu,
        };
        let mk = |z: Vec<u8>| labels((0..8).map(|i| (i % 2) as u8).collect(), z);
        let sets = [mk(vec![0; 8]), mk((0..8).map(|i| (i / 4) as u8).collect())];
        let r = risk_invariance_report(&model, &sets, RiskLoss::LogLoss).unwrap();
        assert!(r.max_gap < 1e-15);
        assert!(risk_invariance_report(&model, &sets[..1], RiskLoss::ZeroOne).is_err());
    }

    proptest! {
        #[test]
        fn invariants(rows in prop::collection::vec((0u8..2, 0u8..2, 0.0f64..=1.0), 1..80)) {
            let d = labels(rows.iter().map(|r| r.0).collect(), rows.iter().map(|r| r.1).collect());
            let s: Vec<f64> = rows.iter().map(|r| r.2).collect();
            let r = evaluate_scores(&s, &d, &EvalOptions::default()).unwrap();
            for v in [r.accuracy, r.worst_group, r.worst_z, r.equalized_odds, r.dp_gap] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!(r.worst_group <= r.accuracy);

            // relabeling Z leaves equalized odds unchanged
            let flipped = labels(d.y().to_vec(), d.z().iter().map(|z| 1 - z).collect());
            let f = evaluate_scores(&s, &flipped, &EvalOptions::default()).unwrap();
            prop_assert!((f.equalized_odds - r.equalized_odds).abs() < 1e-12);
            prop_assert!((f.worst_group - r.worst_group).abs() < 1e-12);
        }
    }
}
