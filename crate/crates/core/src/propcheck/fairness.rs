use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{default_tol, Component, DecompositionLabel, AUX, OUTCOME};
use crate::balancing::{balance_exact, BalanceSpec};
use crate::dist::{JointTable, Variable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FairnessCriterion {
    /// W ⊥ Z
    DemographicParity,
    /// Y ⊥ Z | W
    PredictiveParity,
    /// W ⊥ Z | Y
    EqualizedOdds,
}

impl FairnessCriterion {
    pub const ALL: [FairnessCriterion; 3] = [
        FairnessCriterion::DemographicParity,
        FairnessCriterion::PredictiveParity,
        FairnessCriterion::EqualizedOdds,
    ];

    fn gap(self, q: &JointTable, w: &[&str], tol: f64) -> Result<f64> {
        Ok(match self {
            FairnessCriterion::DemographicParity => q.is_independent(w, &[AUX], &[], tol)?.gap,
            FairnessCriterion::PredictiveParity => q.is_independent(&[OUTCOME], &[AUX], w, tol)?.gap,
            FairnessCriterion::EqualizedOdds => q.is_independent(w, &[AUX], &[OUTCOME], tol)?.gap,
        })
    }
}

impl fmt::Display for FairnessCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FairnessCriterion::DemographicParity => "demographic-parity",
            FairnessCriterion::PredictiveParity => "predictive-parity",
            FairnessCriterion::EqualizedOdds => "equalized-odds",
        })
    }
}

impl FromStr for FairnessCriterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "demographic-parity" | "dp" => Ok(FairnessCriterion::DemographicParity),
            "predictive-parity" | "pp" => Ok(FairnessCriterion::PredictiveParity),
            "equalized-odds" | "eo" => Ok(FairnessCriterion::EqualizedOdds),
            other => Err(Error::Argument(format!("unknown fairness criterion `{other}`"))),
        }
    }
}

/// Independence a representation W = φ(XZ) is regularized towards in Q.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regularizer {
    /// W ⊥ Z | Y
    ConditionalOnY,
    /// W ⊥ Z
    Marginal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppendixBReport {
    pub criterion: FairnessCriterion,
    pub regularizer: Option<Regularizer>,
    /// without a regularizer: XZ ⊥ Z | Y in P*; with one: Y ⊥ Z and the
    /// regularized independence, both in Q
    pub premise_gap: f64,
    pub premise_holds: bool,
    /// gap of the criterion for W = XZ in Q
    pub conclusion_gap: f64,
    pub conclusion_holds: bool,
    /// whether the premise is sufficient for the criterion
    pub implied: bool,
    /// an implied conclusion holds whenever its premise does
    pub consistent: bool,
}

/// Check a fairness implication of joint balancing on `table` (P*), with
/// the representation W = XZ evaluated in the balanced Q.
pub fn check_appendix_b(
    table: &JointTable,
    labels: &DecompositionLabel,
    criterion: FairnessCriterion,
    regularizer: Option<Regularizer>,
) -> Result<AppendixBReport> {
    labels.validate(table)?;
    let w = labels.of(Component::XZperp);
    if w.is_empty() {
        return Err(Error::Label("no covariate is labeled XZperp".into()));
    }
    let tol = default_tol();
    let q = balance_exact(table, &BalanceSpec::exact_joint(OUTCOME, AUX))?;
    let (premise_gap, implied) = match regularizer {
        None => (table.is_independent(&w, &[AUX], &[OUTCOME], tol)?.gap, true),
        Some(r) => {
            let balance = q.is_independent(&[OUTCOME], &[AUX], &[], tol)?.gap;
            let given: &[&str] = match r {
                Regularizer::ConditionalOnY => &[OUTCOME],
                Regularizer::Marginal => &[],
            };
            let reg = q.is_independent(&w, &[AUX], given, tol)?.gap;
            let implied = r == Regularizer::ConditionalOnY || criterion == FairnessCriterion::DemographicParity;
            (balance.max(reg), implied)
        }
    };
    let conclusion_gap = criterion.gap(&q, &w, tol)?;
    let premise_holds = premise_gap <= tol;
    let conclusion_holds = conclusion_gap <= tol;
    Ok(AppendixBReport {
        criterion,
        regularizer,
        premise_gap,
        premise_holds,
        conclusion_gap,
        conclusion_holds,
        implied,
        consistent: !(implied && premise_holds) || conclusion_holds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XorReport {
    /// W ⊥ Z
    pub w_z_gap: f64,
    /// Y ⊥ Z
    pub y_z_gap: f64,
    /// Y ⊥ Z | W
    pub predictive_parity_gap: f64,
    /// W ⊥ Z | Y
    pub equalized_odds_gap: f64,
}

/// Joint over (W, Y, Z) with W = 1{A=B}, Y = 1{A=C}, Z = 1{B=C} for
/// independent fair bits A, B, C.
pub fn xor_table() -> Result<JointTable> {
    let vars = vec![Variable::binary("W"), Variable::binary(OUTCOME), Variable::binary(AUX)];
    let mut probs = vec![0.0; 8];
    for bits in 0..8usize {
        let (a, b, c) = (bits & 1, (bits >> 1) & 1, (bits >> 2) & 1);
        let (w, y, z) = ((a == b) as usize, (a == c) as usize, (b == c) as usize);
        probs[(w * 2 + y) * 2 + z] += 0.125;
    }
    JointTable::new(vars, probs)
}

pub fn xor_counterexample() -> Result<XorReport> {
    let t = xor_table()?;
    let tol = default_tol();
    Ok(XorReport {
        w_z_gap: t.is_independent(&["W"], &[AUX], &[], tol)?.gap,
        y_z_gap: t.is_independent(&[OUTCOME], &[AUX], &[], tol)?.gap,
        predictive_parity_gap: t.is_independent(&[OUTCOME], &[AUX], &["W"], tol)?.gap,
        equalized_odds_gap: t.is_independent(&["W"], &[AUX], &[OUTCOME], tol)?.gap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CausalDependence {
    /// XZ ⊥ Z gap in P*
    pub gap_p: f64,
    /// XZ ⊥ Z gap in the jointly balanced Q
    pub gap_q: f64,
}

/// Marginal dependence between the XZ covariates and Z before and after
/// joint balancing.
pub fn causal_task_dependence(table: &JointTable, labels: &DecompositionLabel) -> Result<CausalDependence> {
    labels.validate(table)?;
    let xz = labels.of(Component::XZperp);
    if xz.is_empty() {
        return Err(Error::Label("no covariate is labeled XZperp".into()));
    }
    let tol = default_tol();
    let q = balance_exact(table, &BalanceSpec::exact_joint(OUTCOME, AUX))?;
    Ok(CausalDependence {
        gap_p: table.is_independent(&xz, &[AUX], &[], tol)?.gap,
        gap_q: q.is_independent(&xz, &[AUX], &[], tol)?.gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cbn::templates::{latent_collider, GraphId, TemplateParams};
    use crate::propcheck::observed_joint;

    #[test]
    fn anti_causal_template_satisfies_all_criteria() {
        let t = observed_joint(GraphId::A, &TemplateParams::default()).unwrap();
        let labels = DecompositionLabel::for_graph(GraphId::A);
        for c in FairnessCriterion::ALL {
            let r = check_appendix_b(&t, &labels, c, None).unwrap();
            assert!(r.premise_holds && r.conclusion_gap < 1e-12 && r.consistent, "{c}: {r:?}");
        }
    }

    #[test]
    fn causal_template_breaks_demographic_parity() {
        let t = observed_joint(GraphId::B, &TemplateParams::default()).unwrap();
        let labels = DecompositionLabel::for_graph(GraphId::B);
        let r = check_appendix_b(&t, &labels, FairnessCriterion::DemographicParity, None).unwrap();
        assert!(!r.premise_holds && r.conclusion_gap > 1e-6 && r.consistent);
    }

    #[test]
    fn conditional_regularizer_is_sufficient() {
        let t = observed_joint(GraphId::A, &TemplateParams::default()).unwrap();
        let labels = DecompositionLabel::for_graph(GraphId::A);
        for c in FairnessCriterion::ALL {
            let r = check_appendix_b(&t, &labels, c, Some(Regularizer::ConditionalOnY)).unwrap();
            assert!(r.implied && r.premise_holds && r.conclusion_holds, "{c}");
        }
        let r = check_appendix_b(&t, &labels, FairnessCriterion::PredictiveParity, Some(Regularizer::Marginal))
            .unwrap();
        assert!(!r.implied && r.consistent);
    }

    #[test]
    fn xor_construction() {
        let r = xor_counterexample().unwrap();
        assert_eq!(r.w_z_gap, 0.0);
        assert_eq!(r.y_z_gap, 0.0);
        assert!((r.predictive_parity_gap - 0.25).abs() < 1e-15);
        assert!((r.equalized_odds_gap - 0.25).abs() < 1e-15);
        // given W, Y determines Z
        let t = xor_table().unwrap();
        for (s, p) in t.iter() {
            if p > 0.0 {
                assert_eq!(s[0] == 1, s[1] == s[2]);
            }
        }
    }

    #[test]
    fn causal_task_dependence_appears_after_balancing() {
        let t = observed_joint(GraphId::B, &TemplateParams::default()).unwrap();
        let r = causal_task_dependence(&t, &DecompositionLabel::for_graph(GraphId::B)).unwrap();
        assert!(r.gap_p < 1e-9 && r.gap_q > 1e-6, "{r:?}");

        // with U carrying no information about Y the balanced table equals P*
        let p = TemplateParams {
            causal_weight: 1.0,
            ..TemplateParams::default()
        };
        let t = observed_joint(GraphId::B, &p).unwrap();
        let r = causal_task_dependence(&t, &DecompositionLabel::for_graph(GraphId::B)).unwrap();
        assert!(r.gap_q < 1e-9, "{r:?}");
    }

    #[test]
    fn simulation_model_dependence() {
        let net = latent_collider();
        let t = net.joint().unwrap().marginalize(&["X", "Y", "Z"]).unwrap();
        let labels = DecompositionLabel::new(&[("X", Component::XZperp)]);
        let r = causal_task_dependence(&t, &labels).unwrap();
        assert!(r.gap_p < 1e-12 && r.gap_q > 1e-3, "{r:?}");
    }
}
