//! Numerical checks of the balancing propositions on concrete instances.
//!
//! Tables handed to these checks are over observed variables: the outcome
//! `Y`, the auxiliary factor `Z`, optionally `V`, and labeled covariates.

mod fairness;
mod prop4;
mod shift;
pub mod suite;

pub use fairness::{
    causal_task_dependence, check_appendix_b, xor_counterexample, AppendixBReport, CausalDependence,
    FairnessCriterion, Regularizer, XorReport,
};
pub use prop4::{factorization_control, prop4_counterexample, ExampleId, Prop4Report, MAX_TRIES};
pub use shift::{
    check_prop1, check_prop3_bound, default_grid_points, risk_invariance_gap, Loss, Prop1Report, Prop3Report, RiskInvariance,
    ShiftFamily,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use crate::cbn::templates::Component;
use crate::cbn::templates::{template, GraphId, TemplateParams};
use crate::dist::{JointTable, StateIter, Variable, INDEPENDENCE_TOL};
use crate::error::{Error, Result};

pub const OUTCOME: &str = "Y";
pub const AUX: &str = "Z";
pub const AUX_V: &str = "V";
/// Gap above which a dependence counts as a structural (generic) violation.
pub const GENERIC_GAP: f64 = 1e-6;

/// Assignment of every observed covariate to a decomposition component.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecompositionLabel {
    pub assignment: BTreeMap<String, Component>,
}

impl DecompositionLabel {
    pub fn new(pairs: &[(&str, Component)]) -> Self {
        DecompositionLabel {
            assignment: pairs.iter().map(|(n, c)| (n.to_string(), *c)).collect(),
        }
    }

    pub fn for_graph(id: GraphId) -> Self {
        Self::new(&id.covariates())
    }

    /// Covariates carrying the given component, in name order.
    pub fn of(&self, c: Component) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, k)| **k == c)
            .map(|(n, _)| n.as_str())
            .collect()
    }

    /// Every non-outcome, non-auxiliary variable of the table must be
    /// labeled, and every label must name a table variable.
    pub fn validate(&self, table: &JointTable) -> Result<()> {
        for v in [OUTCOME, AUX] {
            if !table.has(v) {
                return Err(Error::Name(v.to_string()));
            }
        }
        for name in table.names() {
            if name != OUTCOME && name != AUX && name != AUX_V && !self.assignment.contains_key(name) {
                return Err(Error::Label(format!("covariate `{name}` has no label")));
            }
        }
        for name in self.assignment.keys() {
            if !table.has(name) {
                return Err(Error::Label(format!("label for `{name}`, which is not in the table")));
            }
            if name == OUTCOME || name == AUX || name == AUX_V {
                return Err(Error::Label(format!("`{name}` is not a covariate")));
            }
        }
        Ok(())
    }
}

/// Joint of a built-in template over its observed variables.
pub fn observed_joint(id: GraphId, params: &TemplateParams) -> Result<JointTable> {
    let net = template(id, params)?;
    let obs = id.observed();
    let obs: Vec<&str> = obs.iter().map(String::as_str).collect();
    net.joint()?.marginalize(&obs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Corollary2Report {
    pub holds: bool,
    /// gap of R ⊥ {Y, XZ} | Z, R = all non-XZ covariates
    pub cond1_gap: f64,
    /// gap of XZ ⊥ Z | Y
    pub cond2_gap: f64,
}

pub fn check_corollary2(table: &JointTable, labels: &DecompositionLabel, tol: f64) -> Result<Corollary2Report> {
    labels.validate(table)?;
    let xz = labels.of(Component::XZperp);
    let mut r = labels.of(Component::XYperp);
    r.extend(labels.of(Component::XYandZ));
    r.extend(labels.of(Component::XV));
    let mut yx = vec![OUTCOME];
    yx.extend(&xz);
    let cond1_gap = if r.is_empty() {
        0.0
    } else {
        table.is_independent(&r, &yx, &[AUX], tol)?.gap
    };
    let cond2_gap = if xz.is_empty() {
        0.0
    } else {
        table.is_independent(&xz, &[AUX], &[OUTCOME], tol)?.gap
    };
    Ok(Corollary2Report {
        holds: cond1_gap <= tol && cond2_gap <= tol,
        cond1_gap,
        cond2_gap,
    })
}

/// A predictor given as a score per joint state of its input variables.
/// `None` marks states the predictor is undefined on.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    inputs: Vec<Variable>,
    scores: Vec<Option<f64>>,
}

impl Predictor {
    pub fn new(inputs: Vec<Variable>, scores: Vec<Option<f64>>) -> Result<Self> {
        let cells: usize = inputs.iter().map(|v| v.card).product();
        if scores.len() != cells {
            return Err(Error::Argument(format!("{} scores for {cells} input states", scores.len())));
        }
        Ok(Predictor { inputs, scores })
    }

    /// Constant score, defined everywhere.
    pub fn constant(inputs: Vec<Variable>, score: f64) -> Self {
        let cells: usize = inputs.iter().map(|v| v.card).product();
        Predictor {
            inputs,
            scores: vec![Some(score); cells],
        }
    }

    pub fn inputs(&self) -> &[Variable] {
        &self.inputs
    }

    pub fn input_names(&self) -> Vec<&str> {
        self.inputs.iter().map(|v| v.name.as_str()).collect()
    }

    pub fn scores(&self) -> &[Option<f64>] {
        &self.scores
    }

    pub fn score(&self, state: &[usize]) -> Option<f64> {
        let mut i = 0;
        for (v, &s) in self.inputs.iter().zip(state) {
            i = i * v.card + s;
        }
        self.scores[i]
    }

    /// Iterate input states with their scores.
    pub fn iter(&self) -> impl Iterator<Item = (Vec<usize>, Option<f64>)> + '_ {
        StateIter::new(self.inputs.iter().map(|v| v.card).collect()).zip(self.scores.iter().copied())
    }

    /// Shift every defined score by `±delta` (alternating by state),
    /// clamped to [0, 1].
    pub fn perturbed(&self, delta: f64) -> Predictor {
        let scores = self
            .scores
            .iter()
            .enumerate()
            .map(|(i, s)| {
                s.map(|v| {
                    let d = if i % 2 == 0 { delta } else { -delta };
                    (v + d).clamp(0.0, 1.0)
                })
            })
            .collect();
        Predictor {
            inputs: self.inputs.clone(),
            scores,
        }
    }

    /// Column indices of the inputs in `table`.
    pub(crate) fn bind(&self, table: &JointTable) -> Result<Vec<usize>> {
        self.inputs
            .iter()
            .map(|v| {
                let i = table.index_of(&v.name)?;
                if table.variables()[i].card != v.card {
                    return Err(Error::Argument(format!("cardinality of `{}` differs", v.name)));
                }
                Ok(i)
            })
            .collect()
    }
}

/// E[Y | inputs] for every reachable input state; unreachable states are
/// left undefined.
pub fn bayes_predictor(table: &JointTable, inputs: &[&str]) -> Result<Predictor> {
    if inputs.is_empty() {
        return Err(Error::Argument("bayes predictor needs at least one input".into()));
    }
    if inputs.contains(&OUTCOME) {
        return Err(Error::Argument("the outcome cannot be an input".into()));
    }
    let mut keep: Vec<&str> = inputs.to_vec();
    keep.push(OUTCOME);
    let m = table.marginalize(&keep)?.reorder(&keep)?;
    let cy = m.card(OUTCOME)?;
    let vars: Vec<Variable> = m.variables()[..inputs.len()].to_vec();
    let scores = m
        .probs()
        .chunks(cy)
        .map(|block| {
            let mass: f64 = block.iter().sum();
            (mass > 0.0).then(|| block.iter().enumerate().map(|(y, p)| y as f64 * p).sum::<f64>() / mass)
        })
        .collect();
    Predictor::new(vars, scores)
}

/// Joint over (Y, Z, X) with Y, Z independent fair coins and
/// P(X=1) = p if Y OR Z else q.
pub fn entangled_table(p: f64, q: f64) -> Result<JointTable> {
    for (n, v) in [("p", p), ("q", q)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Argument(format!("{n} = {v} is outside [0, 1]")));
        }
    }
    JointTable::from_fn(
        vec![Variable::binary(OUTCOME), Variable::binary(AUX), Variable::binary("X")],
        |s| {
            let px1 = if s[0] == 1 || s[1] == 1 { p } else { q };
            0.25 * if s[2] == 1 { px1 } else { 1.0 - px1 }
        },
    )
}

/// Closed form of (E[f(X)|Z=1], E[f(X)|Z=0]) for the Bayes predictor f of
/// the entangled model. A term whose X state has zero probability vanishes.
pub fn entangled_gap(p: f64, q: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&q) {
        return Err(Error::Argument(format!("p = {p}, q = {q} must lie in [0, 1]")));
    }
    let px1 = 0.75 * p + 0.25 * q;
    let f1 = if px1 > 0.0 { 0.5 * p / px1 } else { 0.0 };
    let f0 = if px1 < 1.0 { 0.5 * (1.0 - p) / (1.0 - px1) } else { 0.0 };
    let given_z1 = p * f1 + (1.0 - p) * f0;
    let given_z0 = (0.5 * p + 0.5 * q) * f1 + (0.5 * (1.0 - p) + 0.5 * (1.0 - q)) * f0;
    Ok((given_z1, given_z0))
}

/// (E[f|Z=1], E[f|Z=0]) by enumerating the entangled joint.
pub fn entangled_gap_enumerated(p: f64, q: f64) -> Result<(f64, f64)> {
    let t = entangled_table(p, q)?;
    let f = bayes_predictor(&t, &["X"])?;
    let mut out = [0.0; 2];
    for (z, slot) in out.iter_mut().enumerate() {
        let c = t.condition(&[(AUX, z)])?.marginalize(&["X"])?;
        *slot = c
            .iter()
            .filter(|(_, w)| *w > 0.0)
            .map(|(s, w)| w * f.score(&s).expect("reachable state has a score"))
            .sum();
    }
    Ok((out[1], out[0]))
}

pub(crate) fn default_tol() -> f64 {
    INDEPENDENCE_TOL
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sufficiency_conditions_on_templates() {
        let p = TemplateParams::default();
        let a = check_corollary2(&observed_joint(GraphId::A, &p).unwrap(), &DecompositionLabel::for_graph(GraphId::A), 1e-9)
            .unwrap();
        assert!(a.holds, "{a:?}");
        let b = check_corollary2(&observed_joint(GraphId::B, &p).unwrap(), &DecompositionLabel::for_graph(GraphId::B), 1e-9)
            .unwrap();
        assert!(!b.holds);
        assert!(b.cond2_gap > 1e-6);
        let d = check_corollary2(&observed_joint(GraphId::D, &p).unwrap(), &DecompositionLabel::for_graph(GraphId::D), 1e-9)
            .unwrap();
        assert!(d.cond1_gap > 1e-6);
        assert!(d.cond2_gap < 1e-12);
    }

    #[test]
    fn unlabeled_covariate() {
        let t = observed_joint(GraphId::A, &TemplateParams::default()).unwrap();
        let labels = DecompositionLabel::new(&[("XZ", Component::XZperp)]);
        assert!(matches!(check_corollary2(&t, &labels, 1e-9), Err(Error::Label(_))));
    }

    #[test]
    fn entangled_extreme_case() {
        let (z1, z0) = entangled_gap(1.0, 0.0).unwrap();
        assert_eq!((z1, z0), (2.0 / 3.0, 1.0 / 3.0));
        let f = bayes_predictor(&entangled_table(1.0, 0.0).unwrap(), &["X"]).unwrap();
        assert!((f.score(&[1]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f.score(&[0]).unwrap(), 0.0);
    }

    #[test]
    fn entangled_equal_parameters() {
        let (a, b) = entangled_gap(0.3, 0.3).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn entangled_general_formula_for_f1() {
        let (p, q) = (0.9, 0.2);
        let f = bayes_predictor(&entangled_table(p, q).unwrap(), &["X"]).unwrap();
        assert!((f.score(&[1]).unwrap() - 0.5 * p / (0.75 * p + 0.25 * q)).abs() < 1e-15);
        let (c1, c0) = entangled_gap(p, q).unwrap();
        let (e1, e0) = entangled_gap_enumerated(p, q).unwrap();
        assert!((c1 - e1).abs() < 1e-12 && (c0 - e0).abs() < 1e-12);
    }

    #[test]
    fn uninformative_inputs_give_marginal() {
        let t = JointTable::from_fn(vec![Variable::binary("Y"), Variable::binary("X")], |s| {
            if s[0] == 1 { 0.3 } else { 0.7 }
        })
        .unwrap();
        let f = bayes_predictor(&t, &["X"]).unwrap();
        for (_, s) in f.iter() {
            assert!((s.unwrap() - 0.3).abs() < 1e-15);
        }
    }
}
