use serde::{Deserialize, Serialize};

use super::Dag;
use crate::dist::JointTable;
use crate::error::{Error, Result};

/// Observed-variable limit for the exhaustive conditioning-set scan.
const MAX_OBSERVED: usize = 12;

/// A conditional independence implied by the graph that fails in the table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub a: Vec<String>,
    pub b: Vec<String>,
    pub given: Vec<String>,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorizationReport {
    pub holds: bool,
    /// number of implied statements tested
    pub checked: usize,
    pub violations: Vec<Violation>,
}

impl FactorizationReport {
    pub fn max_gap(&self) -> f64 {
        self.violations.iter().map(|v| v.gap).fold(0.0, f64::max)
    }
}

/// Test every independence that d-separation implies among the table's
/// variables. Graph nodes absent from the table are treated as latent.
///
/// Pairwise statements are checked under every conditioning subset of the
/// remaining observed variables; with no latent nodes the local Markov
/// statements are checked as well, which makes the test exact.
pub fn factorizes_according_to(table: &JointTable, graph: &Dag, tol: f64) -> Result<FactorizationReport> {
    let observed: Vec<&str> = table.names();
    for v in &observed {
        if !graph.contains(v) {
            return Err(Error::Name(v.to_string()));
        }
    }
    if observed.len() > MAX_OBSERVED {
        return Err(Error::Argument(format!(
            "factorization check supports at most {MAX_OBSERVED} observed variables"
        )));
    }
    let mut violations = Vec::new();
    let mut checked = 0;
    let n = observed.len();
    for i in 0..n {
        for j in (i + 1)..n {
            let rest: Vec<&str> = (0..n).filter(|&k| k != i && k != j).map(|k| observed[k]).collect();
            for mask in 0u32..(1 << rest.len()) {
                let given: Vec<&str> = rest
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| mask & (1 << k) != 0)
                    .map(|(_, v)| *v)
                    .collect();
                if !graph.d_separated(&[observed[i]], &[observed[j]], &given)? {
                    continue;
                }
                checked += 1;
                let r = table.is_independent(&[observed[i]], &[observed[j]], &given, tol)?;
                if !r.independent {
                    violations.push(Violation {
                        a: vec![observed[i].to_string()],
                        b: vec![observed[j].to_string()],
                        given: given.iter().map(|s| s.to_string()).collect(),
                        gap: r.gap,
                    });
                }
            }
        }
    }
    if graph.len() == n {
        // local Markov: node independent of non-descendants given parents
        for (v, name) in graph.names().iter().enumerate() {
            let parents = graph.parents(name)?;
            let desc = graph.descendants(v);
            let others: Vec<&str> = graph
                .names()
                .iter()
                .enumerate()
                .filter(|(k, m)| *k != v && !desc.contains(k) && !parents.contains(&m.as_str()))
                .map(|(_, m)| m.as_str())
                .collect();
            if others.is_empty() {
                continue;
            }
            checked += 1;
            let r = table.is_independent(&[name.as_str()], &others, &parents, tol)?;
            if !r.independent {
                violations.push(Violation {
                    a: vec![name.clone()],
                    b: others.iter().map(|s| s.to_string()).collect(),
                    given: parents.iter().map(|s| s.to_string()).collect(),
                    gap: r.gap,
                });
            }
        }
    }
    Ok(FactorizationReport {
        holds: violations.is_empty(),
        checked,
        violations,
    })
}
