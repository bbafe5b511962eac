//! Graph file format.
//!
//! ```text
//! [nodes]
//! U 2
//! Y 2
//! [edges]
//! U -> Y
//! [cpt U]
//! : 0.5 0.5
//! [cpt Y]
//! 0 : 0.8 0.2
//! 1 : 0.3 0.7
//! ```
//!
//! A node's parents are ordered as its incoming edges are listed. CPT rows
//! are prefixed by the parent states and must appear in row-major order.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::{Cbn, NodeSpec};
use crate::dist::{StateIter, Variable};
use crate::error::{parse_err, Error, Result};

pub(crate) fn write_cbn(net: &Cbn) -> String {
    let mut s = String::from("[nodes]\n");
    for v in &net.vars {
        let _ = writeln!(s, "{} {}", v.name, v.card);
    }
    s.push_str("[edges]\n");
    for (a, b) in net.dag.edges() {
        let _ = writeln!(s, "{a} -> {b}");
    }
    for (i, v) in net.vars.iter().enumerate() {
        let _ = writeln!(s, "[cpt {}]", v.name);
        let pcards: Vec<usize> = net.dag.parent_indices(i).iter().map(|&p| net.vars[p].card).collect();
        for (ps, row) in StateIter::new(pcards).zip(net.cpts[i].chunks(v.card)) {
            let idx: Vec<String> = ps.iter().map(|x| x.to_string()).collect();
            let vals: Vec<String> = row.iter().map(|p| format!("{p:e}")).collect();
            let prefix = if idx.is_empty() { String::new() } else { idx.join(" ") + " " };
            let _ = writeln!(s, "{prefix}: {}", vals.join(" "));
        }
    }
    s
}

enum Section {
    None,
    Nodes,
    Edges,
    Cpt(String),
}

pub(crate) fn parse_cbn(text: &str) -> Result<Cbn> {
    let mut vars: Vec<Variable> = Vec::new();
    let mut parents: HashMap<String, Vec<String>> = HashMap::new();
    let mut rows: HashMap<String, Vec<(usize, Vec<usize>, Vec<f64>)>> = HashMap::new();
    let mut section = Section::None;

    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(h) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = match h.trim() {
                "nodes" => Section::Nodes,
                "edges" => Section::Edges,
                other => match other.strip_prefix("cpt ") {
                    Some(n) => {
                        let n = n.trim().to_string();
                        if !vars.iter().any(|v| v.name == n) {
                            return Err(parse_err(ln, format!("cpt for undeclared node `{n}`")));
                        }
                        if rows.contains_key(&n) {
                            return Err(parse_err(ln, format!("second cpt block for `{n}`")));
                        }
                        rows.insert(n.clone(), Vec::new());
                        Section::Cpt(n)
                    }
                    None => return Err(parse_err(ln, format!("unknown section `{other}`"))),
                },
            };
            continue;
        }
        match &section {
            Section::None => return Err(parse_err(ln, "content before first section")),
            Section::Nodes => {
                let mut it = line.split_whitespace();
                let (Some(name), Some(card), None) = (it.next(), it.next(), it.next()) else {
                    return Err(parse_err(ln, "expected `<name> <cardinality>`"));
                };
                let card = card.parse().map_err(|_| parse_err(ln, "bad cardinality"))?;
                if vars.iter().any(|v| v.name == name) {
                    return Err(parse_err(ln, format!("duplicate node `{name}`")));
                }
                vars.push(Variable::new(name, card));
            }
            Section::Edges => {
                let (a, b) = line
                    .split_once("->")
                    .ok_or_else(|| parse_err(ln, "expected `<from> -> <to>`"))?;
                let (a, b) = (a.trim(), b.trim());
                for n in [a, b] {
                    if !vars.iter().any(|v| v.name == n) {
                        return Err(parse_err(ln, format!("edge mentions undeclared node `{n}`")));
                    }
                }
                parents.entry(b.to_string()).or_default().push(a.to_string());
            }
            Section::Cpt(node) => {
                let (idx, vals) = line
                    .split_once(':')
                    .ok_or_else(|| parse_err(ln, "expected `<parent states> : <probabilities>`"))?;
                let idx: Vec<usize> = idx
                    .split_whitespace()
                    .map(|x| x.parse().map_err(|_| parse_err(ln, "bad parent state")))
                    .collect::<Result<_>>()?;
                let vals: Vec<f64> = vals
                    .split_whitespace()
                    .map(|x| x.parse().map_err(|_| parse_err(ln, "bad probability")))
                    .collect::<Result<_>>()?;
                rows.get_mut(node).expect("section registered").push((ln, idx, vals));
            }
        }
    }

    let mut nodes = Vec::with_capacity(vars.len());
    for v in &vars {
        let ps = parents.remove(&v.name).unwrap_or_default();
        let pcards: Vec<usize> = ps
            .iter()
            .map(|p| vars.iter().find(|w| &w.name == p).map(|w| w.card).unwrap_or(0))
            .collect();
        let listed = rows
            .remove(&v.name)
            .ok_or_else(|| Error::InvalidGraph(format!("missing cpt block for `{}`", v.name)))?;
        let expected: Vec<Vec<usize>> = StateIter::new(pcards).collect();
        if listed.len() != expected.len() {
            return Err(Error::InvalidGraph(format!(
                "cpt of `{}` lists {} rows, expected {}",
                v.name,
                listed.len(),
                expected.len()
            )));
        }
        let mut cpt = Vec::with_capacity(listed.len());
        for ((ln, idx, vals), want) in listed.into_iter().zip(expected) {
            if idx != want {
                return Err(parse_err(ln, format!("expected parent state {want:?}, found {idx:?}")));
            }
            cpt.push(vals);
        }
        let ps: Vec<&str> = ps.iter().map(String::as_str).collect();
        nodes.push(NodeSpec::new(&v.name, v.card, &ps, cpt));
    }
    Cbn::new(nodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cbn::Dag;

    #[test]
    fn round_trip() {
        let dag = Dag::new(&["U", "Y", "Z", "X"], &[("U", "Y"), ("U", "Z"), ("Z", "X"), ("Y", "X")]).unwrap();
        let net = Cbn::random(&dag, &[2, 3, 2, 2], 8).unwrap();
        let text = net.to_string();
        let back: Cbn = text.parse().unwrap();
        assert_eq!(back, net);
        assert_eq!(back.parents("X").unwrap(), vec!["Z", "Y"]);
    }

    #[test]
    fn parses_hand_written_document() {
        let text = "[nodes]\nU 2\nY 2\n[edges]\nU -> Y\n[cpt U]\n: 0.5 0.5\n[cpt Y]\n0 : 0.8 0.2\n1 : 0.3 0.7\n";
        let net: Cbn = text.parse().unwrap();
        assert_eq!(net.cpt("Y").unwrap()[1], &[0.3, 0.7]);
    }

    #[test]
    fn reports_line_of_bad_row() {
        let text = "[nodes]\nU 2\nY 2\n[edges]\nU -> Y\n[cpt U]\n: 0.5 0.5\n[cpt Y]\n1 : 0.8 0.2\n0 : 0.3 0.7\n";
        assert!(matches!(text.parse::<Cbn>(), Err(Error::Parse { line: 9, .. })));
        assert!(matches!("[nodes]\nU 2\n".parse::<Cbn>(), Err(Error::InvalidGraph(_))));
    }
}
