//! Discrete Bayesian network over biomarker factors and the outcome label.
//!
//! Structure is learned with K2 over a fixed node ordering, CPTs with a
//! Dirichlet pseudocount, and posteriors are computed exactly by variable
//! elimination.

mod factor;
mod inference;
mod learn;

use std::collections::{BTreeSet, HashMap};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use inference::{
    infer_posterior, infer_posterior_indexed, rank_contributions, Contribution, FactorContribution, Posterior,
};
pub use learn::{fit_cpts, k2_score, learn_structure, LabeledEvidenceSet, LabeledRow};

/// Tolerance on CPT row sums.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CausalError {
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("node {node:?} has no state {state}")]
    UnknownState { node: String, state: String },
    #[error("graph contains a cycle through {0:?}")]
    Cyclic(String),
    #[error("node ordering does not cover exactly the network nodes: {0}")]
    OrderingIncomplete(String),
    #[error("edge constraint conflict: {0}")]
    ConstraintConflict(String),
    #[error("invalid CPT for {node:?}: {reason}")]
    InvalidCpt { node: String, reason: String },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("evidence has zero probability under the model")]
    ZeroProbabilityEvidence,
    #[error("network has no CPT for {0:?}; fit it first")]
    NotFitted(String),
    #[error("no data rows")]
    EmptyData,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    pub states: Vec<String>,
}

impl NodeSpec {
    pub fn new(name: impl Into<String>, states: &[&str]) -> Self {
        NodeSpec { name: name.into(), states: states.iter().map(|s| s.to_string()).collect() }
    }

    pub fn cardinality(&self) -> usize {
        self.states.len()
    }
}

/// `(child, parents, table)` as accepted by [`CausalNetwork::with_cpts`].
pub type CptSpec<'a> = (&'a str, Vec<&'a str>, Vec<Vec<f64>>);

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeConstraints {
    #[serde(default)]
    pub required: Vec<(String, String)>,
    #[serde(default)]
    pub forbidden: Vec<(String, String)>,
    /// Parents must precede children. Empty means node declaration order.
    #[serde(default)]
    pub ordering: Vec<String>,
}

/// `P(node | parents)`. Rows enumerate parent configurations with the last
/// parent varying fastest; columns are the node's states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cpt {
    pub parents: Vec<String>,
    pub table: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalNetwork {
    pub nodes: Vec<NodeSpec>,
    pub edges: Vec<(String, String)>,
    #[serde(default)]
    pub cpts: IndexMap<String, Cpt>,
    #[serde(default)]
    pub priors: EdgeConstraints,
    /// The diagnostic outcome node.
    pub outcome: String,
}

impl CausalNetwork {
    /// Structure-only network. Edges are sorted and deduplicated.
    pub fn structure(
        nodes: Vec<NodeSpec>,
        edges: Vec<(String, String)>,
        outcome: impl Into<String>,
        priors: EdgeConstraints,
    ) -> Result<Self, CausalError> {
        let edges: BTreeSet<(String, String)> = edges.into_iter().collect();
        let net = CausalNetwork {
            nodes,
            edges: edges.into_iter().collect(),
            cpts: IndexMap::new(),
            priors,
            outcome: outcome.into(),
        };
        net.validate_structure()?;
        Ok(net)
    }

    /// Fully specified network; CPT parents may be given in any order that
    /// matches `parents()` (declaration order).
    pub fn with_cpts(nodes: Vec<NodeSpec>, cpts: Vec<CptSpec<'_>>, outcome: &str) -> Result<Self, CausalError> {
        let mut edges = Vec::new();
        for (child, parents, _) in &cpts {
            for p in parents {
                edges.push((p.to_string(), child.to_string()));
            }
        }
        let mut net = CausalNetwork::structure(nodes, edges, outcome, EdgeConstraints::default())?;
        for (child, parents, table) in cpts {
            net.cpts
                .insert(child.to_string(), Cpt { parents: parents.into_iter().map(str::to_string).collect(), table });
        }
        net.validate()?;
        Ok(net)
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn node(&self, name: &str) -> Result<&NodeSpec, CausalError> {
        self.nodes.iter().find(|n| n.name == name).ok_or_else(|| CausalError::UnknownNode(name.to_string()))
    }

    /// Parents of `name` in node declaration order.
    pub fn parents(&self, name: &str) -> Vec<&str> {
        let mut ps: Vec<&str> = self.edges.iter().filter(|(_, c)| c == name).map(|(p, _)| p.as_str()).collect();
        ps.sort_by_key(|p| self.node_index(p));
        ps
    }

    /// Nodes in the order used for K2 and for acyclicity checks.
    pub fn ordering(&self) -> Vec<String> {
        if self.priors.ordering.is_empty() {
            self.nodes.iter().map(|n| n.name.clone()).collect()
        } else {
            self.priors.ordering.clone()
        }
    }

    /// Kahn topological sort; fails on a cycle.
    pub fn topological_order(&self) -> Result<Vec<usize>, CausalError> {
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (p, c) in &self.edges {
            let pi = self.node_index(p).ok_or_else(|| CausalError::UnknownNode(p.clone()))?;
            let ci = self.node_index(c).ok_or_else(|| CausalError::UnknownNode(c.clone()))?;
            children[pi].push(ci);
            indeg[ci] += 1;
        }
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for &c in &children[i] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() != n {
            let stuck = (0..n).find(|&i| indeg[i] > 0).expect("cycle member");
            return Err(CausalError::Cyclic(self.nodes[stuck].name.clone()));
        }
        Ok(order)
    }

    pub fn validate_structure(&self) -> Result<(), CausalError> {
        let mut names = BTreeSet::new();
        for node in &self.nodes {
            if node.states.is_empty() {
                return Err(CausalError::InvalidCpt { node: node.name.clone(), reason: "node has no states".into() });
            }
            if !names.insert(node.name.as_str()) {
                return Err(CausalError::SchemaMismatch(format!("duplicate node {:?}", node.name)));
            }
        }
        self.node(&self.outcome)?;
        for (p, c) in &self.edges {
            self.node(p)?;
            self.node(c)?;
            if p == c {
                return Err(CausalError::Cyclic(p.clone()));
            }
        }
        self.topological_order()?;

        let ordering = self.ordering();
        let pos: HashMap<&str, usize> = ordering.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        if pos.len() != self.nodes.len()
            || ordering.len() != self.nodes.len()
            || !self.nodes.iter().all(|n| pos.contains_key(n.name.as_str()))
        {
            return Err(CausalError::OrderingIncomplete(format!(
                "ordering {ordering:?} vs {} nodes",
                self.nodes.len()
            )));
        }
        for (p, c) in &self.edges {
            if pos[p.as_str()] > pos[c.as_str()] {
                return Err(CausalError::ConstraintConflict(format!("edge {p} -> {c} runs against the node ordering")));
            }
        }
        for e in &self.priors.required {
            if !self.edges.contains(e) {
                return Err(CausalError::ConstraintConflict(format!("required edge {} -> {} missing", e.0, e.1)));
            }
        }
        for e in &self.priors.forbidden {
            if self.edges.contains(e) {
                return Err(CausalError::ConstraintConflict(format!("forbidden edge {} -> {} present", e.0, e.1)));
            }
        }
        Ok(())
    }

    /// Structure plus CPT shape and normalization checks.
    pub fn validate(&self) -> Result<(), CausalError> {
        self.validate_structure()?;
        for node in &self.nodes {
            let cpt = self.cpts.get(&node.name).ok_or_else(|| CausalError::NotFitted(node.name.clone()))?;
            let parents = self.parents(&node.name);
            if cpt.parents.iter().map(String::as_str).collect::<Vec<_>>() != parents {
                return Err(CausalError::InvalidCpt {
                    node: node.name.clone(),
                    reason: format!("CPT parents {:?} differ from graph parents {parents:?}", cpt.parents),
                });
            }
            let rows: usize =
                parents.iter().map(|p| self.node(p).map(NodeSpec::cardinality)).product::<Result<usize, _>>()?;
            if cpt.table.len() != rows {
                return Err(CausalError::InvalidCpt {
                    node: node.name.clone(),
                    reason: format!("{} rows, expected {rows}", cpt.table.len()),
                });
            }
            for (j, row) in cpt.table.iter().enumerate() {
                if row.len() != node.cardinality() {
                    return Err(CausalError::InvalidCpt {
                        node: node.name.clone(),
                        reason: format!("row {j} has {} entries", row.len()),
                    });
                }
                if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                    return Err(CausalError::InvalidCpt {
                        node: node.name.clone(),
                        reason: format!("row {j} has a negative or non-finite entry"),
                    });
                }
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
                    return Err(CausalError::InvalidCpt {
                        node: node.name.clone(),
                        reason: format!("row {j} sums to {s}"),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn is_fitted(&self) -> bool {
        self.nodes.iter().all(|n| self.cpts.contains_key(&n.name))
    }

    /// Factor nodes (everything except the outcome).
    pub fn factor_names(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(|n| n.name.as_str()).filter(move |n| *n != self.outcome)
    }

    pub fn outcome_node(&self) -> &NodeSpec {
        self.node(&self.outcome).expect("validated outcome")
    }

    /// Index of `state` among the states of `node`.
    pub fn state_index(&self, node: &str, state: &str) -> Result<usize, CausalError> {
        self.node(node)?
            .states
            .iter()
            .position(|s| s == state)
            .ok_or_else(|| CausalError::UnknownState { node: node.to_string(), state: state.to_string() })
    }
}
