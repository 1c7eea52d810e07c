use std::collections::{BTreeMap, HashMap, HashSet};

use libm::lgamma;
use serde::{Deserialize, Serialize};

use super::{CausalError, CausalNetwork, Cpt, EdgeConstraints, NodeSpec};
use crate::biomarker::DiscreteEvidence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRow {
    pub evidence: DiscreteEvidence,
    pub outcome: String,
}

/// Training rows over a node schema whose last-declared role is the outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledEvidenceSet {
    pub nodes: Vec<NodeSpec>,
    pub outcome: String,
    pub rows: Vec<LabeledRow>,
}

impl LabeledEvidenceSet {
    pub fn new(nodes: Vec<NodeSpec>, outcome: impl Into<String>, rows: Vec<LabeledRow>) -> Result<Self, CausalError> {
        let set = LabeledEvidenceSet { nodes, outcome: outcome.into(), rows };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), CausalError> {
        let out = self
            .nodes
            .iter()
            .find(|n| n.name == self.outcome)
            .ok_or_else(|| CausalError::UnknownNode(self.outcome.clone()))?;
        for row in &self.rows {
            if !out.states.contains(&row.outcome) {
                return Err(CausalError::SchemaMismatch(format!(
                    "record {}: outcome {:?} not in {:?}",
                    row.evidence.record_id, row.outcome, out.states
                )));
            }
            for (factor, &bin) in &row.evidence.bins {
                let node = self.nodes.iter().find(|n| &n.name == factor).ok_or_else(|| {
                    CausalError::SchemaMismatch(format!(
                        "record {}: factor {factor:?} not in schema",
                        row.evidence.record_id
                    ))
                })?;
                if factor == &self.outcome || bin == 0 || bin > node.cardinality() {
                    return Err(CausalError::SchemaMismatch(format!(
                        "record {}: bin {bin} invalid for {factor:?}",
                        row.evidence.record_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Declaration order with the outcome moved last.
    pub fn default_ordering(&self) -> Vec<String> {
        let mut order: Vec<String> = self.nodes.iter().map(|n| n.name.clone()).filter(|n| n != &self.outcome).collect();
        order.push(self.outcome.clone());
        order
    }

    fn index(&self, name: &str) -> Result<usize, CausalError> {
        self.nodes.iter().position(|n| n.name == name).ok_or_else(|| CausalError::UnknownNode(name.to_string()))
    }

    /// Row-major 0-based states, `None` for missing.
    fn columns(&self) -> Vec<Vec<Option<usize>>> {
        self.rows
            .iter()
            .map(|row| {
                self.nodes
                    .iter()
                    .map(|n| {
                        if n.name == self.outcome {
                            n.states.iter().position(|s| s == &row.outcome)
                        } else {
                            row.evidence.bins.get(&n.name).map(|b| b - 1)
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Counts `N_jk` keyed by parent configuration, over rows where the node and
/// every parent are observed.
fn family_counts(
    table: &[Vec<Option<usize>>],
    cards: &[usize],
    node: usize,
    parents: &[usize],
) -> BTreeMap<usize, Vec<u64>> {
    let mut counts: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
    'rows: for row in table {
        let Some(k) = row[node] else { continue };
        let mut j = 0;
        for &p in parents {
            let Some(s) = row[p] else { continue 'rows };
            j = j * cards[p] + s;
        }
        counts.entry(j).or_insert_with(|| vec![0; cards[node]])[k] += 1;
    }
    counts
}

fn k2_from_counts(counts: &BTreeMap<usize, Vec<u64>>, r: usize) -> f64 {
    let lg_r = lgamma(r as f64);
    counts
        .values()
        .map(|nk| {
            let nj: u64 = nk.iter().sum();
            lg_r - lgamma((nj + r as u64) as f64) + nk.iter().map(|&n| lgamma(n as f64 + 1.0)).sum::<f64>()
        })
        .sum()
}

/// Cooper-Herskovits log marginal likelihood of `node` given `parents`.
pub fn k2_score(data: &LabeledEvidenceSet, node: &str, parents: &[&str]) -> Result<f64, CausalError> {
    if data.is_empty() {
        return Err(CausalError::EmptyData);
    }
    let v = data.index(node)?;
    let ps = parents.iter().map(|p| data.index(p)).collect::<Result<Vec<_>, _>>()?;
    let cards: Vec<usize> = data.nodes.iter().map(NodeSpec::cardinality).collect();
    let table = data.columns();
    Ok(k2_from_counts(&family_counts(&table, &cards, v, &ps), cards[v]))
}

/// K2 greedy parent search over the constraint ordering.
pub fn learn_structure(
    data: &LabeledEvidenceSet,
    priors: &EdgeConstraints,
    max_parents: usize,
) -> Result<CausalNetwork, CausalError> {
    if data.is_empty() {
        return Err(CausalError::EmptyData);
    }
    let ordering = if priors.ordering.is_empty() { data.default_ordering() } else { priors.ordering.clone() };
    let names: HashSet<&str> = data.nodes.iter().map(|n| n.name.as_str()).collect();
    let ord_set: HashSet<&str> = ordering.iter().map(String::as_str).collect();
    if ordering.len() != data.nodes.len() || ord_set != names {
        return Err(CausalError::OrderingIncomplete(format!(
            "ordering {ordering:?} vs nodes {:?}",
            data.nodes.iter().map(|n| &n.name).collect::<Vec<_>>()
        )));
    }
    let pos: HashMap<&str, usize> = ordering.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let forbidden: HashSet<(&str, &str)> = priors.forbidden.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    for (p, c) in &priors.required {
        let (Some(&pp), Some(&pc)) = (pos.get(p.as_str()), pos.get(c.as_str())) else {
            return Err(CausalError::ConstraintConflict(format!("required edge {p} -> {c} names an unknown node")));
        };
        if pp >= pc {
            return Err(CausalError::ConstraintConflict(format!("required edge {p} -> {c} violates the ordering")));
        }
        if forbidden.contains(&(p.as_str(), c.as_str())) {
            return Err(CausalError::ConstraintConflict(format!("edge {p} -> {c} is both required and forbidden")));
        }
    }

    let cards: Vec<usize> = data.nodes.iter().map(NodeSpec::cardinality).collect();
    let table = data.columns();
    let idx = |n: &str| data.index(n).expect("checked");
    let mut edges = Vec::new();

    for (i, child) in ordering.iter().enumerate() {
        let c = idx(child);
        let mut parents: Vec<usize> =
            priors.required.iter().filter(|(_, ch)| ch == child).map(|(p, _)| idx(p)).collect();
        parents.sort_unstable();
        parents.dedup();
        let score_of = |ps: &[usize]| k2_from_counts(&family_counts(&table, &cards, c, ps), cards[c]);
        let mut current = score_of(&parents);

        let mut candidates: Vec<&String> =
            ordering[..i].iter().filter(|p| !forbidden.contains(&(p.as_str(), child.as_str()))).collect();
        candidates.sort();

        while parents.len() < max_parents {
            let mut best: Option<(f64, usize)> = None;
            for cand in &candidates {
                let ci = idx(cand);
                if parents.contains(&ci) {
                    continue;
                }
                let mut trial = parents.clone();
                trial.push(ci);
                trial.sort_unstable();
                let s = score_of(&trial);
                if best.is_none_or(|(bs, _)| s > bs) {
                    best = Some((s, ci));
                }
            }
            match best {
                Some((s, ci)) if s > current => {
                    parents.push(ci);
                    parents.sort_unstable();
                    current = s;
                }
                _ => break,
            }
        }
        for p in parents {
            edges.push((data.nodes[p].name.clone(), child.clone()));
        }
    }

    let mut stored = priors.clone();
    stored.ordering = ordering;
    CausalNetwork::structure(data.nodes.clone(), edges, data.outcome.clone(), stored)
}

/// Dirichlet-smoothed CPTs; parent configurations never observed get a
/// uniform row.
pub fn fit_cpts(
    net: &CausalNetwork,
    data: &LabeledEvidenceSet,
    pseudocount: f64,
) -> Result<CausalNetwork, CausalError> {
    if !(pseudocount > 0.0) || !pseudocount.is_finite() {
        return Err(CausalError::InvalidParameter(format!("pseudocount must be > 0, got {pseudocount}")));
    }
    if net.nodes != data.nodes || net.outcome != data.outcome {
        return Err(CausalError::SchemaMismatch("data schema differs from network nodes".into()));
    }
    net.validate_structure()?;
    let cards: Vec<usize> = net.nodes.iter().map(NodeSpec::cardinality).collect();
    let table = data.columns();
    let mut out = net.clone();
    out.cpts.clear();
    for (v, node) in net.nodes.iter().enumerate() {
        let parents: Vec<String> = net.parents(&node.name).into_iter().map(String::from).collect();
        let pidx: Vec<usize> = parents.iter().map(|p| net.node_index(p).expect("validated")).collect();
        let counts = family_counts(&table, &cards, v, &pidx);
        let rows: usize = pidx.iter().map(|&p| cards[p]).product();
        let r = cards[v];
        let cpt_rows = (0..rows)
            .map(|j| match counts.get(&j) {
                None => vec![1.0 / r as f64; r],
                Some(nk) => {
                    let nj: u64 = nk.iter().sum();
                    let denom = nj as f64 + pseudocount * r as f64;
                    nk.iter().map(|&n| (n as f64 + pseudocount) / denom).collect()
                }
            })
            .collect();
        out.cpts.insert(node.name.clone(), Cpt { parents, table: cpt_rows });
    }
    out.validate()?;
    Ok(out)
}
