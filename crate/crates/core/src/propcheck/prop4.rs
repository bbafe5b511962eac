use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{AUX, GENERIC_GAP, OUTCOME};
use crate::balancing::{balance_exact, BalanceSpec};
use crate::cbn::templates::GraphId;
use crate::cbn::{factorizes_according_to, Cbn, Dag, FactorizationReport, GraphEdit};
use crate::dist::JointTable;
use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// Seeds tried before a counterexample search gives up.
pub const MAX_TRIES: usize = 16;

/// Tolerance of the control checks, where no violation is expected.
const CONTROL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExampleId {
    C1,
    C2,
    C3,
    C4,
}

impl ExampleId {
    pub const ALL: [ExampleId; 4] = [ExampleId::C1, ExampleId::C2, ExampleId::C3, ExampleId::C4];

    /// (graph, latent nodes, edges removed to form the skeleton)
    fn structure(self) -> (Dag, &'static [&'static str], GraphEdit) {
        let (nodes, edges, latent, removed): (&[&str], &[(&str, &str)], &[&str], &[(&str, &str)]) = match self {
            ExampleId::C1 => (
                &["U", "Z", "X", "Y"],
                &[("Z", "X"), ("X", "Y"), ("U", "Z"), ("U", "Y")],
                &["U"],
                &[("U", "Z"), ("U", "Y")],
            ),
            ExampleId::C2 => (
                &["U", "Z", "X", "Y"],
                &[("X", "Y"), ("U", "Z"), ("U", "Y")],
                &["U"],
                &[("U", "Z"), ("U", "Y")],
            ),
            ExampleId::C3 => (&["Z", "X", "Y"], &[("Z", "X"), ("X", "Y")], &[], &[("Z", "X")]),
            ExampleId::C4 => (
                &["U", "Z", "W", "Y", "X"],
                &[("Y", "X"), ("U", "Z"), ("U", "Y"), ("Z", "W"), ("W", "X")],
                &["U"],
                &[("U", "Z"), ("U", "Y")],
            ),
        };
        let dag = Dag::new(nodes, edges).expect("built-in graph is acyclic");
        (dag, latent, GraphEdit::new(removed))
    }
}

impl fmt::Display for ExampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for ExampleId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "C1" => Ok(ExampleId::C1),
            "C2" => Ok(ExampleId::C2),
            "C3" => Ok(ExampleId::C3),
            "C4" => Ok(ExampleId::C4),
            other => Err(Error::Argument(format!("unknown example `{other}` (expected C1-C4)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prop4Report {
    pub example: ExampleId,
    /// seed of the instantiation that produced the violations
    pub seed: u64,
    pub tries: usize,
    pub network: Cbn,
    pub table_q: JointTable,
    pub skeleton: Dag,
    pub factorization: FactorizationReport,
}

fn balanced_observed(net: &Cbn, latent: &[&str]) -> Result<JointTable> {
    let observed: Vec<&str> = net.names().into_iter().filter(|n| !latent.contains(n)).collect();
    let p = net.joint()?.marginalize(&observed)?;
    balance_exact(&p, &BalanceSpec::exact_joint(OUTCOME, AUX))
}

/// Search seeded random binary instantiations of the example graph for a
/// balanced distribution that violates the skeleton's independences.
pub fn prop4_counterexample(example: ExampleId, seed: u64) -> Result<Prop4Report> {
    let (dag, latent, edit) = example.structure();
    let skeleton = dag.without_edges(&edit)?;
    let cards = vec![2; dag.len()];
    for k in 0..MAX_TRIES {
        let s = derive_seed(seed, k as u64);
        let network = Cbn::random(&dag, &cards, s)?;
        let table_q = balanced_observed(&network, latent)?;
        let factorization = factorizes_according_to(&table_q, &skeleton, GENERIC_GAP)?;
        if factorization.violations.iter().any(|v| v.gap > GENERIC_GAP) {
            return Ok(Prop4Report {
                example,
                seed: s,
                tries: k + 1,
                network,
                table_q,
                skeleton,
                factorization,
            });
        }
    }
    Err(Error::CounterexampleNotFound {
        example: example.to_string(),
        tries: MAX_TRIES,
    })
}

/// Balance a random instantiation of a purely spurious anti-causal template
/// and test it against the template with the undesired edges removed.
pub fn factorization_control(id: GraphId, seed: u64) -> Result<FactorizationReport> {
    if !matches!(id, GraphId::A | GraphId::D) {
        return Err(Error::Argument(format!("graph {id} is not a control graph (expected A or D)")));
    }
    let dag = id.dag();
    let skeleton = dag.without_edges(&id.undesired())?;
    let net = Cbn::random(&dag, &vec![2; dag.len()], seed)?;
    let q = balanced_observed(&net, id.latent())?;
    factorizes_according_to(&q, &skeleton, CONTROL_TOL)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn causal_examples_violate_skeleton() {
        for ex in [ExampleId::C1, ExampleId::C2, ExampleId::C3] {
            let r = prop4_counterexample(ex, 0).unwrap();
            assert!(r.factorization.max_gap() > GENERIC_GAP, "{ex}");
            assert!(r.table_q.is_independent(&["Y"], &["Z"], &[], 1e-12).unwrap().independent);
        }
    }

    #[test]
    fn c2_breaks_marginal_independence_of_x_and_z() {
        let r = prop4_counterexample(ExampleId::C2, 3).unwrap();
        assert!(r.factorization.violations.iter().any(|v| {
            let mut pair = [v.a[0].as_str(), v.b[0].as_str()];
            pair.sort();
            pair == ["X", "Z"] && v.given.is_empty()
        }));
    }

    #[test]
    fn c3_breaks_y_z_given_x() {
        let r = prop4_counterexample(ExampleId::C3, 1).unwrap();
        assert!(r.table_q.is_independent(&["Y"], &["Z"], &["X"], 1e-9).unwrap().gap > GENERIC_GAP);
    }

    // Q = P(Y)P(Z)P(W|Z)P(X|Y,W) under this graph, which is exactly the
    // skeleton's factorization.
    #[test]
    fn anti_causal_example_factorizes() {
        assert!(matches!(
            prop4_counterexample(ExampleId::C4, 0),
            Err(Error::CounterexampleNotFound { tries: MAX_TRIES, .. })
        ));
    }

    #[test]
    fn controls_factorize() {
        for seed in 0..5 {
            for id in [GraphId::A, GraphId::D] {
                let r = factorization_control(id, seed).unwrap();
                assert!(r.holds, "{id} seed {seed}: {:?}", r.violations);
            }
        }
        assert!(factorization_control(GraphId::B, 0).is_err());
    }

    #[test]
    fn ids_round_trip() {
        for ex in ExampleId::ALL {
            assert_eq!(ex.to_string().parse::<ExampleId>().unwrap(), ex);
        }
    }
}
