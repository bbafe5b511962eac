use serde::{Deserialize, Serialize};

use super::{bayes_predictor, Component, DecompositionLabel, Predictor, AUX, OUTCOME};
use crate::dist::JointTable;
use crate::error::{Error, Result};

/// Log-loss clamps scores into [LOG_EPS, 1 - LOG_EPS].
const LOG_EPS: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Loss {
    Squared,
    ZeroOne,
    LogLoss,
}

impl Loss {
    pub fn eval(self, score: f64, y: f64) -> f64 {
        match self {
            Loss::Squared => (score - y).powi(2),
            Loss::ZeroOne => {
                let pred = if score >= 0.5 { 1.0 } else { 0.0 };
                (pred != y) as u8 as f64
            }
            Loss::LogLoss => {
                let s = score.clamp(LOG_EPS, 1.0 - LOG_EPS);
                -(y * s.ln() + (1.0 - y) * (1.0 - s).ln())
            }
        }
    }
}

/// Correlation-shift family: P'(all) = P*(all | Y, Z) P'(Z | Y) P*(Y), with
/// P'(Z | Y) ranging over a grid of conditional tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftFamily {
    base: JointTable,
    /// grid[k][y][z] = P'_k(Z = z | Y = y)
    grid: Vec<Vec<Vec<f64>>>,
}

/// Default grid: P'(Z=0|Y=0) = t, P'(Z=0|Y=1) = 1 - t for 7 evenly spaced t in [0.05, 0.95].
pub fn default_grid_points() -> Vec<f64> {
    (0..7).map(|k| 0.05 + 0.15 * k as f64).collect()
}

impl ShiftFamily {
    pub fn new(base: JointTable, grid: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let cy = base.card(OUTCOME)?;
        let cz = base.card(AUX)?;
        if grid.is_empty() {
            return Err(Error::Argument("shift grid is empty".into()));
        }
        for (k, g) in grid.iter().enumerate() {
            if g.len() != cy || g.iter().any(|r| r.len() != cz) {
                return Err(Error::Argument(format!("grid element {k} is not a {cy}x{cz} table")));
            }
            for row in g {
                let s: f64 = row.iter().sum();
                if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (s - 1.0).abs() > 1e-12 {
                    return Err(Error::Argument(format!("grid element {k} has a row that is not a distribution")));
                }
            }
        }
        Ok(ShiftFamily { base, grid })
    }

    /// Binary grid with P'(Z=0|Y=0) = t and P'(Z=0|Y=1) = 1 - t per point.
    pub fn with_points(base: JointTable, points: &[f64]) -> Result<Self> {
        let grid = points.iter().map(|&t| vec![vec![t, 1.0 - t], vec![1.0 - t, t]]).collect();
        Self::new(base, grid)
    }

    pub fn default_grid(base: JointTable) -> Result<Self> {
        Self::with_points(base, &default_grid_points())
    }

    pub fn base(&self) -> &JointTable {
        &self.base
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn conditional(&self, k: usize) -> &[Vec<f64>] {
        &self.grid[k]
    }

    pub fn element(&self, k: usize) -> Result<JointTable> {
        let iy = self.base.index_of(OUTCOME)?;
        let iz = self.base.index_of(AUX)?;
        let yz = self.base.marginalize(&[OUTCOME, AUX])?.reorder(&[OUTCOME, AUX])?;
        let py = self.base.marginalize(&[OUTCOME])?;
        let g = &self.grid[k];
        for (y, row) in g.iter().enumerate() {
            for (z, &p) in row.iter().enumerate() {
                if p > 0.0 && py.probs()[y] > 0.0 && yz.prob(&[y, z]) == 0.0 {
                    return Err(Error::Coverage(format!(
                        "P*(X | {OUTCOME}={y}, {AUX}={z}) is undefined but the grid puts mass there"
                    )));
                }
            }
        }
        let cells = self
            .base
            .iter()
            .map(|(s, p)| {
                let (y, z) = (s[iy], s[iz]);
                let pyz = yz.prob(&[y, z]);
                if pyz > 0.0 {
                    p / pyz * g[y][z] * py.probs()[y]
                } else {
                    0.0
                }
            })
            .collect();
        self.base.with_probs(cells)
    }

    pub fn elements(&self) -> Result<Vec<JointTable>> {
        (0..self.len()).map(|k| self.element(k)).collect()
    }
}

/// Exact risk of a predictor on a table.
pub(crate) fn risk(predictor: &Predictor, table: &JointTable, loss: Loss) -> Result<f64> {
    let idx = predictor.bind(table)?;
    let iy = table.index_of(OUTCOME)?;
    let mut total = 0.0;
    let mut input = vec![0; idx.len()];
    for (s, p) in table.iter() {
        if p == 0.0 {
            continue;
        }
        for (slot, &i) in input.iter_mut().zip(&idx) {
            *slot = s[i];
        }
        let score = predictor.score(&input).ok_or_else(|| {
            let label: Vec<String> = predictor
                .input_names()
                .iter()
                .zip(&input)
                .map(|(n, v)| format!("{n}={v}"))
                .collect();
            Error::Coverage(label.join(","))
        })?;
        total += p * loss.eval(score, s[iy] as f64);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskInvariance {
    pub risks: Vec<f64>,
    pub sup_gap: f64,
    /// grid indices attaining the sup gap
    pub argmax: (usize, usize),
}

pub fn risk_invariance_gap(predictor: &Predictor, family: &ShiftFamily, loss: Loss) -> Result<RiskInvariance> {
    let risks: Vec<f64> = (0..family.len())
        .map(|k| risk(predictor, &family.element(k)?, loss))
        .collect::<Result<_>>()?;
    let (mut lo, mut hi) = (0, 0);
    for (k, r) in risks.iter().enumerate() {
        if *r < risks[lo] {
            lo = k;
        }
        if *r > risks[hi] {
            hi = k;
        }
    }
    Ok(RiskInvariance {
        sup_gap: risks[hi] - risks[lo],
        argmax: (hi, lo),
        risks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prop3Report {
    /// 2 sup |f(x) - E_P'[Y | XZ = xz]| over grid elements and reachable states
    pub epsilon: f64,
    /// squared-loss risk-invariance gap of f
    pub gap: f64,
    pub bound_holds: bool,
    /// 2 sup |R_P'(f) - R_P'(f*)|, with f* = E_P'[Y | XZ]
    pub risk_epsilon: f64,
}

pub fn check_prop3_bound(fitted: &Predictor, family: &ShiftFamily, labels: &DecompositionLabel) -> Result<Prop3Report> {
    let xz = labels.of(Component::XZperp);
    if xz.is_empty() {
        return Err(Error::Label("no covariate is labeled XZperp".into()));
    }
    let idx = fitted.bind(family.base())?;
    let mut eps_half: f64 = 0.0;
    let mut risk_half: f64 = 0.0;
    for k in 0..family.len() {
        let t = family.element(k)?;
        let star = bayes_predictor(&t, &xz)?;
        let ix = star.bind(&t)?;
        let mut fi = vec![0; idx.len()];
        let mut xi = vec![0; ix.len()];
        for (s, p) in t.iter() {
            if p == 0.0 {
                continue;
            }
            fi.iter_mut().zip(&idx).for_each(|(a, &i)| *a = s[i]);
            xi.iter_mut().zip(&ix).for_each(|(a, &i)| *a = s[i]);
            let f = fitted.score(&fi).ok_or_else(|| Error::Coverage(format!("{fi:?}")))?;
            let e = star.score(&xi).expect("reachable");
            eps_half = eps_half.max((f - e).abs());
        }
        let rf = risk(fitted, &t, Loss::Squared)?;
        let rs = risk(&star, &t, Loss::Squared)?;
        risk_half = risk_half.max((rf - rs).abs());
    }
    let gap = risk_invariance_gap(fitted, family, Loss::Squared)?.sup_gap;
    let epsilon = 2.0 * eps_half;
    Ok(Prop3Report {
        epsilon,
        gap,
        bound_holds: gap <= epsilon + 1e-9,
        risk_epsilon: 2.0 * risk_half,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop1Report {
    /// squared-loss risk-invariance gap of f = E_Q[Y | XZ]
    pub invariance_gap: f64,
    /// per grid element, R_P'(f) - R_P'(E_P'[Y | X]) (nonnegative)
    pub excess_risk: Vec<f64>,
    /// f attains the Bayes risk on every element (tolerance 1e-9)
    pub simultaneously_optimal: bool,
    /// sup risk of f is no larger than the sup risk of any per-element Bayes predictor
    pub minimax_optimal: bool,
}

/// Risk-invariance and optimality of E_Q[Y | XZ] over the family, Q the
/// jointly balanced member.
pub fn check_prop1(q: &JointTable, labels: &DecompositionLabel, family: &ShiftFamily) -> Result<Prop1Report> {
    labels.validate(q)?;
    let xz = labels.of(Component::XZperp);
    let covs: Vec<&str> = labels.assignment.keys().map(String::as_str).collect();
    let f = bayes_predictor(q, &xz)?;
    let elements = family.elements()?;
    let risks_f: Vec<f64> = elements.iter().map(|t| risk(&f, t, Loss::Squared)).collect::<Result<_>>()?;
    let gap = risks_f.iter().cloned().fold(f64::MIN, f64::max) - risks_f.iter().cloned().fold(f64::MAX, f64::min);
    let mut excess = Vec::with_capacity(elements.len());
    let mut worst_other = f64::INFINITY;
    for (t, rf) in elements.iter().zip(&risks_f) {
        let bayes = bayes_predictor(t, &covs)?;
        excess.push(rf - risk(&bayes, t, Loss::Squared)?);
        // worst case of this candidate over the family; undefined states
        // count as the worst possible squared loss
        let mut sup: f64 = 0.0;
        for u in &elements {
            let total = risk_or_worst(&bayes, u)?;
            sup = sup.max(total);
        }
        worst_other = worst_other.min(sup);
    }
    let sup_f = risks_f.iter().cloned().fold(f64::MIN, f64::max);
    Ok(Prop1Report {
        invariance_gap: gap,
        simultaneously_optimal: excess.iter().all(|e| *e <= 1e-9),
        minimax_optimal: sup_f <= worst_other + 1e-9,
        excess_risk: excess,
    })
}

fn risk_or_worst(p: &Predictor, t: &JointTable) -> Result<f64> {
    let idx = p.bind(t)?;
    let iy = t.index_of(OUTCOME)?;
    let mut input = vec![0; idx.len()];
    let mut total = 0.0;
    for (s, w) in t.iter() {
        if w == 0.0 {
            continue;
        }
        input.iter_mut().zip(&idx).for_each(|(a, &i)| *a = s[i]);
        total += w * match p.score(&input) {
            Some(sc) => Loss::Squared.eval(sc, s[iy] as f64),
            None => 1.0,
        };
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::balancing::{balance_exact, BalanceSpec};
    use crate::cbn::templates::{GraphId, TemplateParams};
    use crate::propcheck::observed_joint;

    fn graph_a() -> (JointTable, DecompositionLabel) {
        let p = observed_joint(GraphId::A, &TemplateParams::default()).unwrap();
        let q = balance_exact(&p, &BalanceSpec::exact_joint("Y", "Z")).unwrap();
        (q, DecompositionLabel::for_graph(GraphId::A))
    }

    #[test]
    fn family_preserves_label_marginal_and_mechanisms() {
        let (q, _) = graph_a();
        let fam = ShiftFamily::default_grid(q.clone()).unwrap();
        for k in 0..fam.len() {
            let t = fam.element(k).unwrap();
            let py = t.marginalize(&["Y"]).unwrap();
            assert!(py.max_abs_diff(&q.marginalize(&["Y"]).unwrap()).unwrap() < 1e-12);
            let c = t.marginalize(&["Y", "Z"]).unwrap().condition(&[("Y", 0)]).unwrap();
            assert!((c.probs()[0] - fam.conditional(k)[0][0]).abs() < 1e-12);
        }
    }

    #[test]
    fn bayes_on_core_is_invariant() {
        let (q, labels) = graph_a();
        let fam = ShiftFamily::default_grid(q.clone()).unwrap();
        let f = bayes_predictor(&q, &["XZ"]).unwrap();
        for loss in [Loss::Squared, Loss::ZeroOne, Loss::LogLoss] {
            assert!(risk_invariance_gap(&f, &fam, loss).unwrap().sup_gap < 1e-12);
        }
        let r = check_prop3_bound(&f, &fam, &labels).unwrap();
        assert!(r.epsilon < 1e-12 && r.gap < 1e-12 && r.bound_holds);
        let p1 = check_prop1(&q, &labels, &fam).unwrap();
        assert!(p1.invariance_gap < 1e-12);
        assert!(p1.minimax_optimal);
    }

    #[test]
    fn perturbed_predictor_respects_bound() {
        let (q, labels) = graph_a();
        let fam = ShiftFamily::default_grid(q.clone()).unwrap();
        let f = bayes_predictor(&q, &["XZ"]).unwrap().perturbed(0.05);
        let r = check_prop3_bound(&f, &fam, &labels).unwrap();
        assert!((r.epsilon - 0.1).abs() < 1e-9);
        assert!(r.bound_holds, "{r:?}");
    }

    #[test]
    fn full_input_predictor_on_entangled_graph_is_not_invariant() {
        let p = observed_joint(GraphId::D, &TemplateParams::default()).unwrap();
        let q = balance_exact(&p, &BalanceSpec::exact_joint("Y", "Z")).unwrap();
        let fam = ShiftFamily::with_points(q.clone(), &[0.05, 0.275, 0.5, 0.725, 0.95]).unwrap();
        let f = bayes_predictor(&q, &["XZ", "XE"]).unwrap();
        assert!(risk_invariance_gap(&f, &fam, Loss::Squared).unwrap().sup_gap > 1e-6);
        let r = check_prop3_bound(&f, &fam, &DecompositionLabel::for_graph(GraphId::D)).unwrap();
        assert!(r.bound_holds, "{r:?}");
    }

    #[test]
    fn constant_predictor_has_zero_gap() {
        let (q, _) = graph_a();
        let fam = ShiftFamily::default_grid(q.clone()).unwrap();
        let f = Predictor::constant(vec![crate::dist::Variable::binary("XZ")], 0.3);
        assert!(risk_invariance_gap(&f, &fam, Loss::LogLoss).unwrap().sup_gap < 1e-12);
    }

    #[test]
    fn undefined_state_is_a_coverage_error() {
        let (q, _) = graph_a();
        let fam = ShiftFamily::default_grid(q).unwrap();
        let f = Predictor::new(vec![crate::dist::Variable::binary("XZ")], vec![Some(0.2), None]).unwrap();
        assert!(matches!(risk_invariance_gap(&f, &fam, Loss::Squared), Err(Error::Coverage(_))));
    }
}
