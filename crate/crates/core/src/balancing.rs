//! Balancing operators on exact tables and on finite samples.

use std::collections::BTreeMap;

use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dist::{kahan_sum, JointTable, SampleBatch};
use crate::error::{Error, Result};
use crate::rng::{self, streams};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    /// make `y` and `z` independent, keeping their marginals
    Joint { y: String, z: String },
    /// make one variable's marginal uniform
    Single(String),
}

impl Target {
    pub fn joint(y: &str, z: &str) -> Self {
        Target::Joint {
            y: y.to_string(),
            z: z.to_string(),
        }
    }

    pub fn single(v: &str) -> Self {
        Target::Single(v.to_string())
    }

    fn names(&self) -> Vec<&str> {
        match self {
            Target::Joint { y, z } => vec![y.as_str(), z.as_str()],
            Target::Single(v) => vec![v.as_str()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mechanism {
    ExactReweight,
    ImportanceWeights,
    SubsampleMajority,
    UpsampleMinority,
}

impl Mechanism {
    pub fn resamples(self) -> bool {
        matches!(self, Mechanism::SubsampleMajority | Mechanism::UpsampleMinority)
    }
}

impl std::str::FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "exact" | "exactreweight" => Ok(Mechanism::ExactReweight),
            "importance" | "importanceweights" | "weights" => Ok(Mechanism::ImportanceWeights),
            "subsample" | "subsamplemajority" => Ok(Mechanism::SubsampleMajority),
            "upsample" | "upsampleminority" => Ok(Mechanism::UpsampleMinority),
            other => Err(Error::Argument(format!("unknown balancing mechanism `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalanceSpec {
    pub target: Target,
    pub mechanism: Mechanism,
    /// required exactly when the mechanism resamples
    pub seed: Option<u64>,
}

impl BalanceSpec {
    pub fn exact_joint(y: &str, z: &str) -> Self {
        BalanceSpec {
            target: Target::joint(y, z),
            mechanism: Mechanism::ExactReweight,
            seed: None,
        }
    }

    pub fn new(target: Target, mechanism: Mechanism, seed: Option<u64>) -> Result<Self> {
        let s = BalanceSpec {
            target,
            mechanism,
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if let Target::Joint { y, z } = &self.target {
            if y == z {
                return Err(Error::Argument("joint balancing needs two distinct variables".into()));
            }
        }
        match (self.mechanism.resamples(), self.seed) {
            (true, None) => Err(Error::Argument(format!("{:?} requires a seed", self.mechanism))),
            (false, Some(_)) => Err(Error::Argument(format!(
                "{:?} does not resample; remove the seed",
                self.mechanism
            ))),
            _ => Ok(()),
        }
    }
}

fn cell_label(names: &[&str], state: &[usize]) -> String {
    names
        .iter()
        .zip(state)
        .map(|(n, s)| format!("{n}={s}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Q = P * P(y)P(z)/P(y,z).
pub fn balance_exact(table: &JointTable, spec: &BalanceSpec) -> Result<JointTable> {
    spec.validate()?;
    let Target::Joint { y, z } = &spec.target else {
        return Err(Error::Argument("balance_exact needs a joint target".into()));
    };
    let iy = table.index_of(y)?;
    let iz = table.index_of(z)?;
    let yz = table.marginalize(&[y, z])?.reorder(&[y, z])?;
    let (cy, cz) = (table.variables()[iy].card, table.variables()[iz].card);
    let py: Vec<f64> = (0..cy).map(|a| kahan_sum((0..cz).map(|b| yz.prob(&[a, b])))).collect();
    let pz: Vec<f64> = (0..cz).map(|b| kahan_sum((0..cy).map(|a| yz.prob(&[a, b])))).collect();
    let mut w = vec![0.0; cy * cz];
    for a in 0..cy {
        for b in 0..cz {
            let target = py[a] * pz[b];
            let have = yz.prob(&[a, b]);
            if have > 0.0 {
                w[a * cz + b] = target / have;
            } else if target > 0.0 {
                return Err(Error::UnbalanceableSupport {
                    cell: cell_label(&[y, z], &[a, b]),
                });
            }
        }
    }
    let cells = table.iter().map(|(s, p)| p * w[s[iy] * cz + s[iz]]).collect();
    table.with_probs(cells)
}

/// Uniformise the marginal of one variable, keeping conditionals given it.
pub fn balance_single_exact(table: &JointTable, spec: &BalanceSpec) -> Result<JointTable> {
    spec.validate()?;
    let Target::Single(v) = &spec.target else {
        return Err(Error::Argument("balance_single_exact needs a single-variable target".into()));
    };
    let iv = table.index_of(v)?;
    let m = table.marginalize(&[v])?;
    let card = m.len();
    let mut w = Vec::with_capacity(card);
    for (s, &p) in m.probs().iter().enumerate() {
        if p <= 0.0 {
            return Err(Error::UnbalanceableSupport {
                cell: format!("{v}={s}"),
            });
        }
        w.push(1.0 / (card as f64 * p));
    }
    let cells = table.iter().map(|(s, p)| p * w[s[iv]]).collect();
    table.with_probs(cells)
}

/// Group rows by their target cell. Every cell of the target's state space
/// must be present.
fn group_rows(batch: &SampleBatch, target: &Target) -> Result<(Vec<usize>, Vec<Vec<usize>>)> {
    let names = target.names();
    let idx: Vec<usize> = names.iter().map(|n| batch.index_of(n)).collect::<Result<_>>()?;
    let cards: Vec<usize> = idx.iter().map(|&i| batch.variables()[i].card).collect();
    let n_cells: usize = cards.iter().product();
    let mut groups = vec![Vec::new(); n_cells];
    let mut cell_of = Vec::with_capacity(batch.len());
    for (r, row) in batch.rows().enumerate() {
        let c = idx.iter().zip(&cards).fold(0, |acc, (&i, &k)| acc * k + row[i]);
        groups[c].push(r);
        cell_of.push(c);
    }
    for (c, g) in groups.iter().enumerate() {
        let total: f64 = g.iter().map(|&r| batch.weights()[r]).sum();
        if g.is_empty() || total <= 0.0 {
            let mut state = vec![0; cards.len()];
            let mut rest = c;
            for j in (0..cards.len()).rev() {
                state[j] = rest % cards[j];
                rest /= cards[j];
            }
            return Err(Error::UnbalanceableSupport {
                cell: cell_label(&names, &state),
            });
        }
    }
    Ok((cell_of, groups))
}

/// Rows (with repetition) and weights that realise a balancing mechanism on
/// a batch. Row indices refer to the input batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BalancePlan {
    pub rows: Vec<usize>,
    pub weights: Vec<f64>,
}

pub fn balance_plan(batch: &SampleBatch, spec: &BalanceSpec) -> Result<BalancePlan> {
    spec.validate()?;
    let (cell_of, groups) = group_rows(batch, &spec.target)?;
    let unit = |rows: Vec<usize>| BalancePlan {
        weights: rows.iter().map(|&r| batch.weights()[r]).collect(),
        rows,
    };
    match spec.mechanism {
        Mechanism::ExactReweight | Mechanism::ImportanceWeights => {
            let mass: Vec<f64> = groups
                .iter()
                .map(|g| kahan_sum(g.iter().map(|&r| batch.weights()[r])))
                .collect();
            let total = kahan_sum(mass.iter().copied());
            let target = target_mass(&spec.target, batch, &mass, total)?;
            let weights = batch
                .weights()
                .iter()
                .zip(&cell_of)
                .map(|(w, &c)| w * target[c] / mass[c])
                .collect();
            Ok(BalancePlan {
                rows: (0..batch.len()).collect(),
                weights,
            })
        }
        Mechanism::SubsampleMajority => {
            let seed = spec.seed.expect("validated");
            let m = groups.iter().map(Vec::len).min().unwrap_or(0);
            let mut rng = rng::stream(seed, streams::BALANCE);
            let mut keep = Vec::with_capacity(m * groups.len());
            for g in &groups {
                keep.extend(sample_indices(&mut rng, g.len(), m).into_iter().map(|k| g[k]));
            }
            keep.sort_unstable();
            Ok(unit(keep))
        }
        Mechanism::UpsampleMinority => {
            let seed = spec.seed.expect("validated");
            let m = groups.iter().map(Vec::len).max().unwrap_or(0);
            let mut rng = rng::stream(seed, streams::BALANCE);
            let mut keep: Vec<usize> = (0..batch.len()).collect();
            for g in &groups {
                for _ in g.len()..m {
                    keep.push(g[rng.random_range(0..g.len())]);
                }
            }
            Ok(unit(keep))
        }
    }
}

pub fn balance_batch(batch: &SampleBatch, spec: &BalanceSpec) -> Result<SampleBatch> {
    let plan = balance_plan(batch, spec)?;
    batch.select(&plan.rows).with_weights(plan.weights)
}

/// Cell masses the reweighted batch should carry: n(y)n(z)/n for a joint
/// target, n/|states| for a single one.
fn target_mass(target: &Target, batch: &SampleBatch, mass: &[f64], total: f64) -> Result<Vec<f64>> {
    match target {
        Target::Single(_) => Ok(vec![total / mass.len() as f64; mass.len()]),
        Target::Joint { y, z } => {
            let cy = batch.variables()[batch.index_of(y)?].card;
            let cz = batch.variables()[batch.index_of(z)?].card;
            let ny: Vec<f64> = (0..cy).map(|a| kahan_sum((0..cz).map(|b| mass[a * cz + b]))).collect();
            let nz: Vec<f64> = (0..cz).map(|b| kahan_sum((0..cy).map(|a| mass[a * cz + b]))).collect();
            Ok((0..cy * cz).map(|c| ny[c / cz] * nz[c % cz] / total).collect())
        }
    }
}

/// Effect of uniformising a binary Y on the bias of a binary Z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasShift {
    /// E[Z] - 1/2 before balancing
    pub before: f64,
    /// E[Z] - 1/2 after balancing Y
    pub after: f64,
    /// |P(Y=1) - 1/2| * |E[Z|Y=1] - E[Z|Y=0]|
    pub bound: f64,
    /// |after| > |before|
    pub worsens: bool,
    /// sgn((E[Z]-1/2)/(P(Y=1)-1/2)) = sgn(E[Z|Y=0]-E[Z|Y=1]), both nonzero
    pub sign_condition: bool,
}

pub fn bias_shift_single(p_y1: f64, ez_given_y1: f64, ez_given_y0: f64) -> Result<BiasShift> {
    for (name, v) in [("p_y1", p_y1), ("ez_given_y1", ez_given_y1), ("ez_given_y0", ez_given_y0)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Argument(format!("{name} = {v} is outside [0, 1]")));
        }
    }
    let before = p_y1 * ez_given_y1 + (1.0 - p_y1) * ez_given_y0 - 0.5;
    let after = 0.5 * (ez_given_y1 + ez_given_y0) - 0.5;
    let bound = (p_y1 - 0.5).abs() * (ez_given_y1 - ez_given_y0).abs();
    let ratio_sign = sign(before) * sign(p_y1 - 0.5);
    let diff_sign = sign(ez_given_y0 - ez_given_y1);
    Ok(BiasShift {
        before,
        after,
        bound,
        worsens: after.abs() > before.abs(),
        sign_condition: ratio_sign != 0 && ratio_sign == diff_sign,
    })
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// One row of the single-variable balancing simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    pub p_y1: f64,
    pub p_z1_before: f64,
    pub p_z1_after: f64,
}

/// Latent U ~ N(0, 0.1²); Y = 1[U + e > 0] and Z = 1[U + e' > t] with
/// e, e' ~ N(0.05, 0.02²). For each threshold t, report P(Z=1) before and
/// after uniformising Y by importance weights.
pub fn threshold_simulation(thresholds: &[f64], n: usize, seed: u64) -> Result<Vec<ThresholdRow>> {
    if n == 0 {
        return Err(Error::Argument("sample size must be at least 1".into()));
    }
    let u_dist = Normal::new(0.0, 0.1).map_err(|e| Error::Numerics(e.to_string()))?;
    let e_dist = Normal::new(0.05, 0.02).map_err(|e| Error::Numerics(e.to_string()))?;
    let mut rng = rng::stream(seed, streams::SAMPLE);
    let draws: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            let u = u_dist.sample(&mut rng);
            (u + e_dist.sample(&mut rng), u + e_dist.sample(&mut rng))
        })
        .collect();
    let ys: Vec<bool> = draws.iter().map(|d| d.0 > 0.0).collect();
    let n1 = ys.iter().filter(|&&y| y).count() as f64;
    let n0 = n as f64 - n1;
    if n1 == 0.0 || n0 == 0.0 {
        return Err(Error::UnbalanceableSupport { cell: "Y".into() });
    }
    let mut out = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let mut counts: BTreeMap<(bool, bool), f64> = BTreeMap::new();
        for (&y, d) in ys.iter().zip(&draws) {
            *counts.entry((y, d.1 > t)).or_default() += 1.0;
        }
        let c = |y, z| counts.get(&(y, z)).copied().unwrap_or(0.0);
        out.push(ThresholdRow {
            threshold: t,
            p_y1: n1 / n as f64,
            p_z1_before: (c(false, true) + c(true, true)) / n as f64,
            p_z1_after: 0.5 * c(false, true) / n0 + 0.5 * c(true, true) / n1,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::Variable;

    fn yz(p: [f64; 4]) -> JointTable {
        JointTable::new(vec![Variable::binary("Y"), Variable::binary("Z")], p.to_vec()).unwrap()
    }

    #[test]
    fn correlated_table_becomes_uniform() {
        let q = balance_exact(&yz([0.4, 0.1, 0.1, 0.4]), &BalanceSpec::exact_joint("Y", "Z")).unwrap();
        for p in q.probs() {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn independent_table_is_fixed_point() {
        let t = yz([0.18, 0.12, 0.42, 0.28]);
        let q = balance_exact(&t, &BalanceSpec::exact_joint("Y", "Z")).unwrap();
        assert!(q.max_abs_diff(&t).unwrap() < 1e-15);
    }

    #[test]
    fn missing_support_is_an_error() {
        let t = yz([0.5, 0.0, 0.25, 0.25]);
        let e = balance_exact(&t, &BalanceSpec::exact_joint("Y", "Z")).unwrap_err();
        assert_eq!(e, Error::UnbalanceableSupport { cell: "Y=0,Z=1".into() });
    }

    #[test]
    fn single_balancing_example() {
        // P(Y=1)=1/4, E[Z|Y=1]=1, E[Z|Y=0]=1/3
        let t = yz([0.75 * 2.0 / 3.0, 0.75 / 3.0, 0.0, 0.25]);
        assert!((t.mean_of("Z").unwrap() - 0.5).abs() < 1e-15);
        let spec = BalanceSpec::new(Target::single("Y"), Mechanism::ExactReweight, None).unwrap();
        let q = balance_single_exact(&t, &spec).unwrap();
        assert!((q.mean_of("Y").unwrap() - 0.5).abs() < 1e-15);
        assert!((q.mean_of("Z").unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn bias_shift_worked_example() {
        let r = bias_shift_single(0.25, 1.0, 1.0 / 3.0).unwrap();
        assert!(r.before.abs() < 1e-15);
        assert!((r.after - 1.0 / 6.0).abs() < 1e-15);
        assert!((r.bound - 1.0 / 6.0).abs() < 1e-15);
        assert!(r.worsens);
        // E[Z] sits exactly at 1/2, so the sign premise is undefined
        assert!(!r.sign_condition);
        let flat = bias_shift_single(0.5, 0.9, 0.2).unwrap();
        assert_eq!(flat.after, flat.before);
        assert_eq!(flat.bound, 0.0);
    }

    fn counts_batch(counts: [usize; 4]) -> SampleBatch {
        let mut rows = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            rows.extend(std::iter::repeat_n(vec![c / 2, c % 2], n));
        }
        SampleBatch::new(vec![Variable::binary("Y"), Variable::binary("Z")], rows, None).unwrap()
    }

    #[test]
    fn importance_weights_formula() {
        let b = counts_batch([40, 10, 10, 40]);
        let spec = BalanceSpec::new(Target::joint("Y", "Z"), Mechanism::ImportanceWeights, None).unwrap();
        let out = balance_batch(&b, &spec).unwrap();
        assert!((out.weights()[0] - 0.625).abs() < 1e-15);
        assert!((out.weights()[45] - 2.5).abs() < 1e-15);
        let emp = out.empirical_table().unwrap();
        for p in emp.probs() {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn subsample_to_minimum() {
        let b = counts_batch([40, 10, 10, 40]);
        let spec = BalanceSpec::new(Target::joint("Y", "Z"), Mechanism::SubsampleMajority, Some(3)).unwrap();
        let out = balance_batch(&b, &spec).unwrap();
        assert_eq!(out.len(), 40);
        let emp = out.empirical_table().unwrap();
        assert!(emp.probs().iter().all(|&p| (p - 0.25).abs() < 1e-15));
        assert_eq!(out, balance_batch(&b, &spec).unwrap());
    }

    #[test]
    fn subsample_of_balanced_batch_keeps_rows() {
        let b = counts_batch([5, 5, 5, 5]);
        let spec = BalanceSpec::new(Target::joint("Y", "Z"), Mechanism::SubsampleMajority, Some(1)).unwrap();
        assert_eq!(balance_batch(&b, &spec).unwrap(), b);
    }

    #[test]
    fn upsample_to_maximum() {
        let b = counts_batch([40, 10, 10, 40]);
        let spec = BalanceSpec::new(Target::joint("Y", "Z"), Mechanism::UpsampleMinority, Some(3)).unwrap();
        let out = balance_batch(&b, &spec).unwrap();
        assert_eq!(out.len(), 160);
        assert_eq!(out.row(0), b.row(0));
    }

    #[test]
    fn empty_cell_named_in_error() {
        let b = counts_batch([4, 0, 3, 3]);
        let spec = BalanceSpec::new(Target::joint("Y", "Z"), Mechanism::ImportanceWeights, None).unwrap();
        assert_eq!(
            balance_batch(&b, &spec).unwrap_err(),
            Error::UnbalanceableSupport { cell: "Y=0,Z=1".into() }
        );
    }

    #[test]
    fn seed_rules() {
        assert!(BalanceSpec::new(Target::joint("Y", "Z"), Mechanism::SubsampleMajority, None).is_err());
        assert!(BalanceSpec::new(Target::joint("Y", "Z"), Mechanism::ExactReweight, Some(1)).is_err());
    }

    #[test]
    fn threshold_simulation_directions() {
        let rows = threshold_simulation(&[-0.1, 0.0, 0.1], 5000, 1).unwrap();
        assert!((rows[0].p_y1 - 0.68).abs() < 0.03);
        // same-direction imbalance: balancing Y pulls Z towards 1/2
        let same = rows[0];
        assert!((same.p_z1_after - 0.5).abs() < (same.p_z1_before - 0.5).abs());
    }
}
