use std::collections::{HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Directed acyclic graph over named nodes. Parent lists keep insertion order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dag {
    names: Vec<String>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

/// A set of edges to drop from a graph.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphEdit {
    pub removed_edges: Vec<(String, String)>,
}

impl GraphEdit {
    pub fn new<S: AsRef<str>>(edges: &[(S, S)]) -> Self {
        GraphEdit {
            removed_edges: edges
                .iter()
                .map(|(a, b)| (a.as_ref().to_string(), b.as_ref().to_string()))
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.removed_edges.is_empty()
    }
}

impl Dag {
    pub fn new<S: AsRef<str>>(nodes: &[S], edges: &[(S, S)]) -> Result<Self> {
        let names: Vec<String> = nodes.iter().map(|n| n.as_ref().to_string()).collect();
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::InvalidGraph(format!("duplicate node `{n}`")));
            }
        }
        let mut dag = Dag {
            parents: vec![Vec::new(); names.len()],
            children: vec![Vec::new(); names.len()],
            names,
        };
        for (a, b) in edges {
            let (a, b) = (dag.index(a.as_ref())?, dag.index(b.as_ref())?);
            if a == b {
                return Err(Error::InvalidGraph(format!("self-loop on `{}`", dag.names[a])));
            }
            if dag.parents[b].contains(&a) {
                return Err(Error::InvalidGraph(format!(
                    "duplicate edge {} -> {}",
                    dag.names[a], dag.names[b]
                )));
            }
            dag.parents[b].push(a);
            dag.children[a].push(b);
        }
        dag.topological_order()?;
        Ok(dag)
    }

    pub(crate) fn from_parents(names: Vec<String>, parents: Vec<Vec<usize>>) -> Result<Self> {
        let mut children = vec![Vec::new(); names.len()];
        for (b, ps) in parents.iter().enumerate() {
            for &a in ps {
                children[a].push(b);
            }
        }
        let dag = Dag {
            names,
            parents,
            children,
        };
        dag.topological_order()?;
        Ok(dag)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Name(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    pub fn parent_indices(&self, i: usize) -> &[usize] {
        &self.parents[i]
    }

    pub fn parents(&self, name: &str) -> Result<Vec<&str>> {
        let i = self.index(name)?;
        Ok(self.parents[i].iter().map(|&p| self.names[p].as_str()).collect())
    }

    pub fn children(&self, name: &str) -> Result<Vec<&str>> {
        let i = self.index(name)?;
        Ok(self.children[i].iter().map(|&c| self.names[c].as_str()).collect())
    }

    pub fn has_edge(&self, from: &str, to: &str) -> bool {
        match (self.index(from), self.index(to)) {
            (Ok(a), Ok(b)) => self.parents[b].contains(&a),
            _ => false,
        }
    }

    pub fn edges(&self) -> Vec<(&str, &str)> {
        let mut out = Vec::new();
        for (b, ps) in self.parents.iter().enumerate() {
            for &a in ps {
                out.push((self.names[a].as_str(), self.names[b].as_str()));
            }
        }
        out
    }

    /// Kahn's algorithm; ties broken by node index so the order is stable.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let mut indeg: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut ready: Vec<usize> = (0..self.len()).filter(|&i| indeg[i] == 0).collect();
        ready.reverse();
        let mut order = Vec::with_capacity(self.len());
        while let Some(i) = ready.pop() {
            order.push(i);
            let mut newly = Vec::new();
            for &c in &self.children[i] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    newly.push(c);
                }
            }
            ready.extend(newly);
            ready.sort_unstable_by(|a, b| b.cmp(a));
        }
        if order.len() != self.len() {
            return Err(Error::InvalidGraph("graph contains a directed cycle".into()));
        }
        Ok(order)
    }

    /// Graph with the listed edges removed. Every listed edge must exist.
    pub fn without_edges(&self, edit: &GraphEdit) -> Result<Dag> {
        let mut parents = self.parents.clone();
        for (from, to) in &edit.removed_edges {
            if !self.has_edge(from, to) {
                return Err(Error::Edge {
                    from: from.clone(),
                    to: to.clone(),
                });
            }
            let (a, b) = (self.index(from)?, self.index(to)?);
            parents[b].retain(|&p| p != a);
        }
        Dag::from_parents(self.names.clone(), parents)
    }

    fn index_set(&self, names: &[&str]) -> Result<Vec<usize>> {
        names.iter().map(|n| self.index(n)).collect()
    }

    /// Nodes reachable from `source` by an active trail given `given`.
    fn reachable(&self, source: &[usize], given: &[bool]) -> Vec<bool> {
        // ancestors of the conditioning set, including itself
        let mut anc = given.to_vec();
        let mut stack: Vec<usize> = (0..self.len()).filter(|&i| given[i]).collect();
        while let Some(i) = stack.pop() {
            for &p in &self.parents[i] {
                if !anc[p] {
                    anc[p] = true;
                    stack.push(p);
                }
            }
        }
        const UP: usize = 0; // arrived from a child
        const DOWN: usize = 1; // arrived from a parent
        let mut visited = vec![[false; 2]; self.len()];
        let mut reach = vec![false; self.len()];
        let mut queue: VecDeque<(usize, usize)> = source.iter().map(|&s| (s, UP)).collect();
        while let Some((y, dir)) = queue.pop_front() {
            if visited[y][dir] {
                continue;
            }
            visited[y][dir] = true;
            if !given[y] {
                reach[y] = true;
            }
            if dir == UP && !given[y] {
                queue.extend(self.parents[y].iter().map(|&p| (p, UP)));
                queue.extend(self.children[y].iter().map(|&c| (c, DOWN)));
            } else if dir == DOWN {
                if !given[y] {
                    queue.extend(self.children[y].iter().map(|&c| (c, DOWN)));
                }
                if anc[y] {
                    queue.extend(self.parents[y].iter().map(|&p| (p, UP)));
                }
            }
        }
        reach
    }

    /// Whether every node of `a` is d-separated from every node of `b` given `given`.
    pub fn d_separated(&self, a: &[&str], b: &[&str], given: &[&str]) -> Result<bool> {
        let ia = self.index_set(a)?;
        let ib = self.index_set(b)?;
        let ig = self.index_set(given)?;
        let mut count = vec![0u8; self.len()];
        for &i in ia.iter().chain(&ib).chain(&ig) {
            count[i] += 1;
            if count[i] > 1 {
                return Err(Error::Argument(format!(
                    "node `{}` appears in more than one set",
                    self.names[i]
                )));
            }
        }
        let mut g = vec![false; self.len()];
        for &i in &ig {
            g[i] = true;
        }
        let reach = self.reachable(&ia, &g);
        Ok(ib.iter().all(|&j| !reach[j]))
    }

    /// Indices of all descendants of `i`, excluding `i`.
    pub fn descendants(&self, i: usize) -> Vec<usize> {
        let mut seen = vec![false; self.len()];
        let mut stack = self.children[i].clone();
        while let Some(c) = stack.pop() {
            if !seen[c] {
                seen[c] = true;
                stack.extend(self.children[c].iter().copied());
            }
        }
        (0..self.len()).filter(|&j| seen[j]).collect()
    }
}
