//! Built-in networks for the four failure-mode graphs and the small
//! simulation model with a latent common cause.
//!
//! Node naming: `Y` outcome, `Z` auxiliary factor, `V` second auxiliary
//! factor, `U*` latent causes. Covariate components are `XZ` (independent of
//! Z given the structure), `XY` (driven by Z only), `XE` (entangled, driven
//! by both) and `XV` (driven by V).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{Cbn, Dag, GraphEdit, NodeSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GraphId {
    /// anti-causal task, purely spurious Y–Z dependence
    A,
    /// causal task, purely spurious Y–Z dependence
    B,
    /// anti-causal task with a second auxiliary factor V
    C,
    /// anti-causal task with an entangled covariate
    D,
}

impl GraphId {
    pub const ALL: [GraphId; 4] = [GraphId::A, GraphId::B, GraphId::C, GraphId::D];

    pub fn dag(self) -> Dag {
        let (nodes, edges): (&[&str], &[(&str, &str)]) = match self {
            GraphId::A => (
                &["U", "Y", "Z", "XZ", "XY"],
                &[("U", "Y"), ("U", "Z"), ("Y", "XZ"), ("Z", "XY")],
            ),
            GraphId::B => (
                &["U", "XZ", "Y", "Z", "XY"],
                &[("XZ", "Y"), ("U", "Y"), ("U", "Z"), ("Z", "XY")],
            ),
            GraphId::C => (
                &["U1", "U2", "U3", "Y", "Z", "V", "XZ", "XY", "XV"],
                &[
                    ("U1", "Y"),
                    ("U2", "Y"),
                    ("U1", "Z"),
                    ("U3", "Z"),
                    ("U2", "V"),
                    ("U3", "V"),
                    ("Y", "XZ"),
                    ("Z", "XY"),
                    ("V", "XV"),
                ],
            ),
            GraphId::D => (
                &["U", "Y", "Z", "XZ", "XE"],
                &[("U", "Y"), ("U", "Z"), ("Y", "XZ"), ("Y", "XE"), ("Z", "XE")],
            ),
        };
        Dag::new(nodes, edges).expect("built-in graph is acyclic")
    }

    pub fn latent(self) -> &'static [&'static str] {
        match self {
            GraphId::C => &["U1", "U2", "U3"],
            _ => &["U"],
        }
    }

    pub fn observed(self) -> Vec<String> {
        let latent = self.latent();
        self.dag()
            .names()
            .iter()
            .filter(|n| !latent.contains(&n.as_str()))
            .cloned()
            .collect()
    }

    /// Covariate components with their decomposition label.
    pub fn covariates(self) -> Vec<(&'static str, Component)> {
        match self {
            GraphId::A | GraphId::B => vec![("XZ", Component::XZperp), ("XY", Component::XYperp)],
            GraphId::C => vec![
                ("XZ", Component::XZperp),
                ("XY", Component::XYperp),
                ("XV", Component::XV),
            ],
            GraphId::D => vec![("XZ", Component::XZperp), ("XE", Component::XYandZ)],
        }
    }

    /// Edges carrying the undesired Y–Z dependence.
    pub fn undesired(self) -> GraphEdit {
        match self {
            GraphId::C => GraphEdit::new(&[("U1", "Y"), ("U1", "Z")]),
            _ => GraphEdit::new(&[("U", "Y"), ("U", "Z")]),
        }
    }
}

impl fmt::Display for GraphId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GraphId::A => "A",
            GraphId::B => "B",
            GraphId::C => "C",
            GraphId::D => "D",
        };
        f.write_str(s)
    }
}

impl FromStr for GraphId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(GraphId::A),
            "B" => Ok(GraphId::B),
            "C" => Ok(GraphId::C),
            "D" => Ok(GraphId::D),
            other => Err(Error::Argument(format!("unknown graph `{other}` (expected A-D)"))),
        }
    }
}

/// Decomposition of the covariates into unobserved components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Component {
    /// carries no information about Z beyond what flows through Y
    XZperp,
    /// carries no information about Y beyond what flows through Z
    XYperp,
    /// entangled: caused by both Y and Z
    XYandZ,
    /// caused by the second auxiliary factor V
    XV,
}

/// Parameters of the built-in networks. Unused fields are ignored by graphs
/// that do not need them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TemplateParams {
    /// P(Y=0 | Z=0)
    pub p_y0_given_z0: f64,
    /// P(Y=0 | Z=1)
    pub p_y0_given_z1: f64,
    /// P(Z=0)
    pub p_z0: f64,
    /// probability that XZ differs from Y
    pub core_flip: f64,
    /// probability that XY (or XE) differs from its driver
    pub aux_flip: f64,
    /// graph B: weight of the causal XZ path in P(Y=1 | XZ, U)
    pub causal_weight: f64,
    /// graph B: probability that Z differs from U
    pub z_flip: f64,
}

impl Default for TemplateParams {
    fn default() -> Self {
        TemplateParams {
            p_y0_given_z0: 0.95,
            p_y0_given_z1: 0.10,
            p_z0: 0.5,
            core_flip: 0.2,
            aux_flip: 0.05,
            causal_weight: 0.6,
            z_flip: 0.1,
        }
    }
}

impl TemplateParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("p_y0_given_z0", self.p_y0_given_z0),
            ("p_y0_given_z1", self.p_y0_given_z1),
            ("p_z0", self.p_z0),
            ("core_flip", self.core_flip),
            ("aux_flip", self.aux_flip),
            ("causal_weight", self.causal_weight),
            ("z_flip", self.z_flip),
        ];
        for (name, v) in fields {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Argument(format!("{name} = {v} is not a probability")));
            }
        }
        Ok(())
    }
}

fn flip(name: &str, parent: &str, p: f64) -> NodeSpec {
    NodeSpec::bernoulli(name, &[parent], &[p, 1.0 - p])
}

/// Built-in network for a graph id.
pub fn template(id: GraphId, p: &TemplateParams) -> Result<Cbn> {
    p.validate()?;
    // U is a copy of Z in graphs A and D; it carries P(Z) and the confounding
    let spurious = || {
        vec![
            NodeSpec::bernoulli("U", &[], &[1.0 - p.p_z0]),
            NodeSpec::bernoulli("Y", &["U"], &[1.0 - p.p_y0_given_z0, 1.0 - p.p_y0_given_z1]),
            NodeSpec::bernoulli("Z", &["U"], &[0.0, 1.0]),
        ]
    };
    let nodes = match id {
        GraphId::A => {
            let mut n = spurious();
            n.push(flip("XZ", "Y", p.core_flip));
            n.push(flip("XY", "Z", p.aux_flip));
            n
        }
        GraphId::D => {
            let mut n = spurious();
            n.push(flip("XZ", "Y", p.core_flip));
            let a = p.aux_flip;
            // XE = OR(Y, Z), flipped
            n.push(NodeSpec::bernoulli("XE", &["Y", "Z"], &[a, 1.0 - a, 1.0 - a, 1.0 - a]));
            n
        }
        GraphId::B => {
            let w = p.causal_weight;
            let py = |xz: f64, u: f64| w * (0.2 + 0.6 * xz) + (1.0 - w) * u;
            vec![
                NodeSpec::bernoulli("U", &[], &[0.5]),
                NodeSpec::bernoulli("XZ", &[], &[0.5]),
                NodeSpec::bernoulli("Y", &["XZ", "U"], &[py(0.0, 0.0), py(0.0, 1.0), py(1.0, 0.0), py(1.0, 1.0)]),
                flip("Z", "U", p.z_flip),
                flip("XY", "Z", p.aux_flip),
            ]
        }
        GraphId::C => vec![
            NodeSpec::bernoulli("U1", &[], &[0.5]),
            NodeSpec::bernoulli("U2", &[], &[0.5]),
            NodeSpec::bernoulli("U3", &[], &[0.5]),
            NodeSpec::bernoulli("Y", &["U1", "U2"], &[0.1, 0.6, 0.5, 0.9]),
            NodeSpec::bernoulli("Z", &["U1", "U3"], &[0.15, 0.4, 0.7, 0.85]),
            NodeSpec::bernoulli("V", &["U2", "U3"], &[0.2, 0.45, 0.65, 0.9]),
            flip("XZ", "Y", p.core_flip),
            flip("XY", "Z", p.aux_flip),
            flip("XV", "V", p.aux_flip),
        ],
    };
    let net = Cbn::new(nodes)?;
    debug_assert_eq!(net.dag(), &id.dag());
    Ok(net)
}

/// Discretised simulation model X -> Y <- U -> Z with Gaussian noise
/// thresholds: X = 1[e1 > 0], U = 1[e2 > 0.3], Y = 1[X - U + e3/2 > 1/2],
/// Z = 1[U - e4/2 > 0.1] for independent standard normal e1..e4.
pub fn latent_collider() -> Cbn {
    let phi = |x: f64| Normal::standard().cdf(x);
    let py = |x: f64, u: f64| 1.0 - phi(1.0 - 2.0 * x + 2.0 * u);
    Cbn::new(vec![
        NodeSpec::bernoulli("X", &[], &[0.5]),
        NodeSpec::bernoulli("U", &[], &[1.0 - phi(0.3)]),
        NodeSpec::bernoulli("Y", &["X", "U"], &[py(0.0, 0.0), py(0.0, 1.0), py(1.0, 0.0), py(1.0, 1.0)]),
        NodeSpec::bernoulli("Z", &["U"], &[phi(-0.2), phi(1.8)]),
    ])
    .expect("valid built-in network")
}
