//! Causal Bayesian networks over discrete variables.

mod dag;
mod factorize;
mod format;
pub mod templates;

pub use dag::{Dag, GraphEdit};
pub use factorize::{factorizes_according_to, FactorizationReport, Violation};

use rand::Rng as _;

use crate::dist::{validate_variables, JointTable, SampleBatch, StateIter, Variable};
use crate::error::{Error, Result};
use crate::rng::{self, streams};

/// Row tolerance for conditional probability tables.
pub const CPT_TOL: f64 = 1e-12;

/// Declaration of one node: its variable, ordered parents and CPT rows.
/// Rows are indexed by the parents' joint state (last parent fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub var: Variable,
    pub parents: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl NodeSpec {
    pub fn new(name: &str, card: usize, parents: &[&str], rows: Vec<Vec<f64>>) -> Self {
        NodeSpec {
            var: Variable::new(name, card),
            parents: parents.iter().map(|p| p.to_string()).collect(),
            rows,
        }
    }

    /// Binary node given P(node=1) for each parent state.
    pub fn bernoulli(name: &str, parents: &[&str], p_one: &[f64]) -> Self {
        Self::new(name, 2, parents, p_one.iter().map(|&p| vec![1.0 - p, p]).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cbn {
    vars: Vec<Variable>,
    dag: Dag,
    /// per node, flat rows: parent_state * card + state
    cpts: Vec<Vec<f64>>,
    order: Vec<usize>,
}

impl Cbn {
    pub fn new(nodes: Vec<NodeSpec>) -> Result<Self> {
        let vars: Vec<Variable> = nodes.iter().map(|n| n.var.clone()).collect();
        validate_variables(&vars)?;
        let names: Vec<String> = vars.iter().map(|v| v.name.clone()).collect();
        let index = |n: &str| {
            names
                .iter()
                .position(|m| m == n)
                .ok_or_else(|| Error::Name(n.to_string()))
        };
        let mut parents = Vec::with_capacity(nodes.len());
        for n in &nodes {
            let ps: Vec<usize> = n.parents.iter().map(|p| index(p)).collect::<Result<_>>()?;
            parents.push(ps);
        }
        let dag = Dag::from_parents(names.clone(), parents)?;
        let mut cpts = Vec::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            let expected: usize = dag.parent_indices(i).iter().map(|&p| vars[p].card).product();
            if n.rows.len() != expected {
                return Err(Error::InvalidGraph(format!(
                    "CPT of `{}` has {} rows, expected {expected}",
                    n.var.name,
                    n.rows.len()
                )));
            }
            let mut flat = Vec::with_capacity(expected * n.var.card);
            for (r, row) in n.rows.iter().enumerate() {
                check_row(&n.var, r, row)?;
                flat.extend_from_slice(row);
            }
            cpts.push(flat);
        }
        let order = dag.topological_order()?;
        Ok(Cbn {
            vars,
            dag,
            cpts,
            order,
        })
    }

    /// Network over `dag` with every CPT row drawn uniformly from [0.1, 0.9]
    /// per entry and normalised.
    pub fn random(dag: &Dag, cards: &[usize], seed: u64) -> Result<Self> {
        if cards.len() != dag.len() {
            return Err(Error::Argument("one cardinality per node is required".into()));
        }
        let mut rng = rng::stream(seed, streams::CPT);
        let mut nodes = Vec::with_capacity(dag.len());
        for (i, name) in dag.names().iter().enumerate() {
            let n_rows: usize = dag.parent_indices(i).iter().map(|&p| cards[p]).product();
            let rows = (0..n_rows)
                .map(|_| {
                    let raw: Vec<f64> = (0..cards[i]).map(|_| rng.random_range(0.1..0.9)).collect();
                    let s: f64 = raw.iter().sum();
                    raw.into_iter().map(|x| x / s).collect()
                })
                .collect();
            let ps: Vec<&str> = dag.parent_indices(i).iter().map(|&p| dag.names()[p].as_str()).collect();
            nodes.push(NodeSpec::new(name, cards[i], &ps, rows));
        }
        Cbn::new(nodes)
    }

    pub fn variables(&self) -> &[Variable] {
        &self.vars
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn names(&self) -> Vec<&str> {
        self.vars.iter().map(|v| v.name.as_str()).collect()
    }

    pub fn parents(&self, name: &str) -> Result<Vec<&str>> {
        self.dag.parents(name)
    }

    /// CPT rows of `name`, indexed by parent joint state.
    pub fn cpt(&self, name: &str) -> Result<Vec<&[f64]>> {
        let i = self.dag.index(name)?;
        Ok(self.cpts[i].chunks(self.vars[i].card).collect())
    }

    fn parent_row(&self, i: usize, state: &[usize]) -> usize {
        let mut r = 0;
        for &p in self.dag.parent_indices(i) {
            r = r * self.vars[p].card + state[p];
        }
        r
    }

    fn cond_prob(&self, i: usize, state: &[usize]) -> f64 {
        let card = self.vars[i].card;
        self.cpts[i][self.parent_row(i, state) * card + state[i]]
    }

    /// Exact joint over all nodes, in node order.
    pub fn joint(&self) -> Result<JointTable> {
        validate_variables(&self.vars)?;
        let cards: Vec<usize> = self.vars.iter().map(|v| v.card).collect();
        let probs: Vec<f64> = StateIter::new(cards)
            .map(|s| (0..self.vars.len()).map(|i| self.cond_prob(i, &s)).product())
            .collect();
        JointTable::from_weights(self.vars.clone(), probs)
    }

    /// Ancestral sampling.
    pub fn sample(&self, n: usize, seed: u64) -> Result<SampleBatch> {
        if n == 0 {
            return Err(Error::Argument("sample size must be at least 1".into()));
        }
        let mut rng = rng::stream(seed, streams::SAMPLE);
        let k = self.vars.len();
        let mut rows = Vec::with_capacity(n * k);
        let mut state = vec![0usize; k];
        for _ in 0..n {
            for &i in &self.order {
                let card = self.vars[i].card;
                let r = self.parent_row(i, &state);
                let row = &self.cpts[i][r * card..(r + 1) * card];
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut s = card - 1;
                for (j, &p) in row.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        s = j;
                        break;
                    }
                }
                // never land on a zero-probability state through rounding
                while row[s] == 0.0 && s > 0 {
                    s -= 1;
                }
                state[i] = s;
            }
            rows.extend_from_slice(&state);
        }
        SampleBatch::from_flat(self.vars.clone(), rows, None)
    }

    pub fn d_separated(&self, a: &[&str], b: &[&str], given: &[&str]) -> Result<bool> {
        self.dag.d_separated(a, b, given)
    }

    /// Drop edges. Each affected CPT is averaged over its removed parents
    /// under their joint marginal in this network.
    pub fn mutilate(&self, edit: &GraphEdit) -> Result<Cbn> {
        let new_dag = self.dag.without_edges(edit)?;
        if edit.is_empty() {
            return Ok(self.clone());
        }
        let joint = self.joint()?;
        let mut nodes = Vec::with_capacity(self.vars.len());
        for (i, var) in self.vars.iter().enumerate() {
            let old_par = self.dag.parent_indices(i);
            let kept = new_dag.parent_indices(i);
            let kept_names: Vec<&str> = kept.iter().map(|&p| self.vars[p].name.as_str()).collect();
            if kept.len() == old_par.len() {
                let rows = self.cpts[i].chunks(var.card).map(<[f64]>::to_vec).collect();
                nodes.push(NodeSpec::new(&var.name, var.card, &kept_names, rows));
                continue;
            }
            let removed: Vec<usize> = old_par.iter().copied().filter(|p| !kept.contains(p)).collect();
            let removed_names: Vec<&str> = removed.iter().map(|&p| self.vars[p].name.as_str()).collect();
            let prior = joint.marginalize(&removed_names)?.reorder(&removed_names)?;
            let kept_cards: Vec<usize> = kept.iter().map(|&p| self.vars[p].card).collect();
            let mut rows = Vec::new();
            let mut full = vec![0usize; self.vars.len()];
            for ks in StateIter::new(kept_cards) {
                for (&p, &s) in kept.iter().zip(&ks) {
                    full[p] = s;
                }
                let mut row = vec![0.0; var.card];
                for (rs, w) in prior.iter() {
                    for (&p, &s) in removed.iter().zip(&rs) {
                        full[p] = s;
                    }
                    let r = self.parent_row(i, &full);
                    for (x, acc) in row.iter_mut().enumerate() {
                        *acc += w * self.cpts[i][r * var.card + x];
                    }
                }
                let total: f64 = row.iter().sum();
                rows.push(row.into_iter().map(|x| x / total).collect());
            }
            nodes.push(NodeSpec::new(&var.name, var.card, &kept_names, rows));
        }
        Cbn::new(nodes)
    }
}

fn check_row(var: &Variable, r: usize, row: &[f64]) -> Result<()> {
    if row.len() != var.card {
        return Err(Error::InvalidGraph(format!(
            "CPT row {r} of `{}` has {} entries, expected {}",
            var.name,
            row.len(),
            var.card
        )));
    }
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidGraph(format!(
            "CPT row {r} of `{}` has a negative or non-finite entry",
            var.name
        )));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > CPT_TOL {
        return Err(Error::InvalidGraph(format!(
            "CPT row {r} of `{}` sums to {s}",
            var.name
        )));
    }
    Ok(())
}

impl std::fmt::Display for Cbn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&format::write_cbn(self))
    }
}

impl std::str::FromStr for Cbn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        format::parse_cbn(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fork() -> Cbn {
        Cbn::new(vec![
            NodeSpec::bernoulli("U", &[], &[0.5]),
            NodeSpec::bernoulli("Y", &["U"], &[0.2, 0.7]),
            NodeSpec::bernoulli("Z", &["U"], &[0.1, 0.9]),
        ])
        .unwrap()
    }

    #[test]
    fn single_node_joint() {
        let n = Cbn::new(vec![NodeSpec::bernoulli("A", &[], &[0.7])]).unwrap();
        assert_eq!(n.joint().unwrap().probs(), &[0.30000000000000004, 0.7]);
    }

    #[test]
    fn deterministic_copies_agree() {
        let n = Cbn::new(vec![
            NodeSpec::bernoulli("U", &[], &[0.5]),
            NodeSpec::bernoulli("Y", &["U"], &[0.0, 1.0]),
            NodeSpec::bernoulli("Z", &["U"], &[0.0, 1.0]),
        ])
        .unwrap();
        let j = n.joint().unwrap();
        let agree = j.prob_of(&[("Y", 0), ("Z", 0)]).unwrap() + j.prob_of(&[("Y", 1), ("Z", 1)]).unwrap();
        assert!((agree - 1.0).abs() < 1e-15);
        let s = n.sample(200, 1).unwrap();
        assert!(s.rows().all(|r| r[1] == r[2] && r[0] == r[1]));
    }

    #[test]
    fn sampling_matches_joint() {
        let n = fork();
        let exact = n.joint().unwrap();
        let emp = n.sample(100_000, 4).unwrap().empirical_table().unwrap();
        assert!(exact.max_abs_diff(&emp).unwrap() < 0.01);
        assert_eq!(n.sample(100, 9).unwrap(), n.sample(100, 9).unwrap());
    }

    #[test]
    fn mutilate_replaces_cpt_with_prior_mixture() {
        let n = fork();
        let m = n.mutilate(&GraphEdit::new(&[("U", "Z")])).unwrap();
        assert!(m.parents("Z").unwrap().is_empty());
        let row = m.cpt("Z").unwrap()[0].to_vec();
        assert!((row[1] - 0.5).abs() < 1e-15);
        assert_eq!(m.cpt("Y").unwrap(), n.cpt("Y").unwrap());
    }

    #[test]
    fn mutilate_both_edges_separates() {
        let m = fork().mutilate(&GraphEdit::new(&[("U", "Y"), ("U", "Z")])).unwrap();
        let j = m.joint().unwrap();
        assert!(j.is_independent(&["Y"], &["Z"], &[], 1e-12).unwrap().independent);
        assert!(m.d_separated(&["Y"], &["Z"], &[]).unwrap());
    }

    #[test]
    fn empty_edit_is_identity() {
        let n = fork();
        assert_eq!(n.mutilate(&GraphEdit::default()).unwrap(), n);
    }

    #[test]
    fn rejects_bad_cpts() {
        let bad = Cbn::new(vec![NodeSpec::new("A", 2, &[], vec![vec![0.5, 0.6]])]);
        assert!(matches!(bad, Err(Error::InvalidGraph(_))));
        let shape = Cbn::new(vec![
            NodeSpec::bernoulli("A", &[], &[0.5]),
            NodeSpec::bernoulli("B", &["A"], &[0.5]),
        ]);
        assert!(matches!(shape, Err(Error::InvalidGraph(_))));
        let cyc = Cbn::new(vec![
            NodeSpec::bernoulli("A", &["B"], &[0.5, 0.5]),
            NodeSpec::bernoulli("B", &["A"], &[0.5, 0.5]),
        ]);
        assert!(matches!(cyc, Err(Error::InvalidGraph(_))));
    }

    #[test]
    fn random_networks_are_positive() {
        let dag = Dag::new(&["A", "B", "C"], &[("A", "B"), ("A", "C"), ("B", "C")]).unwrap();
        let n = Cbn::random(&dag, &[2, 3, 2], 17).unwrap();
        assert!(n.joint().unwrap().probs().iter().all(|&p| p > 0.0));
        assert_eq!(n, Cbn::random(&dag, &[2, 3, 2], 17).unwrap());
    }
}
