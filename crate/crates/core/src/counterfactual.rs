//! Minimal evidence edits that move the diagnosis to a target state.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::biomarker::DiscreteEvidence;
use crate::causal_net::{infer_posterior, CausalError, CausalNetwork, Posterior};

/// Upper bound on the number of simultaneously edited factors.
pub const MAX_EDITS_CAP: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinEdit {
    pub factor: String,
    pub from_bin: usize,
    pub to_bin: usize,
    pub from_label: String,
    pub to_label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualResult {
    pub target: String,
    /// Empty when the target already holds or no edit succeeded.
    pub edits: Vec<BinEdit>,
    pub achieved: bool,
    pub posterior_after: Posterior,
    pub candidates_examined: usize,
}

impl CounterfactualResult {
    pub fn size(&self) -> usize {
        self.edits.len()
    }

    /// Edits as a `factor -> new bin` override map.
    pub fn overrides(&self) -> IndexMap<String, usize> {
        self.edits.iter().map(|e| (e.factor.clone(), e.to_bin)).collect()
    }
}

/// Evidence with `overrides` applied; labels follow the network states.
pub fn apply_overrides(
    net: &CausalNetwork,
    evidence: &DiscreteEvidence,
    overrides: &IndexMap<String, usize>,
) -> Result<DiscreteEvidence, CausalError> {
    let mut out = evidence.clone();
    for (factor, &bin) in overrides {
        let node = net.node(factor)?;
        if bin == 0 || bin > node.cardinality() {
            return Err(CausalError::UnknownState { node: factor.clone(), state: bin.to_string() });
        }
        out.bins.insert(factor.clone(), bin);
        out.labels.insert(factor.clone(), node.states[bin - 1].clone());
    }
    Ok(out)
}

/// Posterior of the outcome under `evidence` with `overrides` applied.
pub fn whatif(
    net: &CausalNetwork,
    evidence: &DiscreteEvidence,
    overrides: &IndexMap<String, usize>,
) -> Result<Posterior, CausalError> {
    let edited = apply_overrides(net, evidence, overrides)?;
    infer_posterior(net, &edited, &net.outcome)
}

struct Candidate {
    edits: Vec<(String, usize)>,
    posterior: Posterior,
}

/// Searches size-1 edits, then size-2 when allowed. Among successful edits
/// of the smallest size the one with the highest target probability wins;
/// the enumeration order (factor name, then bin) settles exact ties.
pub fn find_counterfactual(
    net: &CausalNetwork,
    evidence: &DiscreteEvidence,
    target: &str,
    max_edits: usize,
) -> Result<CounterfactualResult, CausalError> {
    net.state_index(&net.outcome, target)?;
    if max_edits == 0 || max_edits > MAX_EDITS_CAP {
        return Err(CausalError::InvalidParameter(format!(
            "max_edits must be between 1 and {MAX_EDITS_CAP}, got {max_edits}"
        )));
    }
    let current = infer_posterior(net, evidence, &net.outcome)?;
    if current.argmax() == target {
        return Ok(CounterfactualResult {
            target: target.to_string(),
            edits: Vec::new(),
            achieved: true,
            posterior_after: current,
            candidates_examined: 0,
        });
    }

    let mut factors: Vec<(&str, usize, usize)> = evidence
        .bins
        .iter()
        .filter(|(f, _)| *f != &net.outcome)
        .filter_map(|(f, &b)| net.node(f).ok().map(|n| (f.as_str(), b, n.cardinality())))
        .collect();
    factors.sort_by(|a, b| a.0.cmp(b.0));

    let single: Vec<(&str, usize)> =
        factors.iter().flat_map(|&(f, obs, card)| (1..=card).filter(move |&b| b != obs).map(move |b| (f, b))).collect();

    let mut examined = 0;
    let mut evaluate = |edits: Vec<(&str, usize)>, best: &mut Option<Candidate>| -> Result<(), CausalError> {
        examined += 1;
        let overrides: IndexMap<String, usize> = edits.iter().map(|&(f, b)| (f.to_string(), b)).collect();
        let post = match whatif(net, evidence, &overrides) {
            Ok(p) => p,
            Err(CausalError::ZeroProbabilityEvidence) => return Ok(()),
            Err(e) => return Err(e),
        };
        if post.argmax() != target {
            return Ok(());
        }
        if best.as_ref().is_none_or(|b| post.prob(target) > b.posterior.prob(target)) {
            *best =
                Some(Candidate { edits: edits.iter().map(|&(f, b)| (f.to_string(), b)).collect(), posterior: post });
        }
        Ok(())
    };

    let mut best = None;
    for &edit in &single {
        evaluate(vec![edit], &mut best)?;
    }
    if best.is_none() && max_edits >= 2 {
        for (i, &a) in single.iter().enumerate() {
            for &b in &single[i + 1..] {
                if a.0 != b.0 {
                    evaluate(vec![a, b], &mut best)?;
                }
            }
        }
    }

    Ok(match best {
        Some(c) => CounterfactualResult {
            target: target.to_string(),
            edits: c
                .edits
                .iter()
                .map(|(f, to)| {
                    let node = net.node(f).expect("evidence factor in net");
                    let from = evidence.bins[f];
                    BinEdit {
                        factor: f.clone(),
                        from_bin: from,
                        to_bin: *to,
                        from_label: node.states[from - 1].clone(),
                        to_label: node.states[to - 1].clone(),
                    }
                })
                .collect(),
            achieved: true,
            posterior_after: c.posterior,
            candidates_examined: examined,
        },
        None => CounterfactualResult {
            target: target.to_string(),
            edits: Vec::new(),
            achieved: false,
            posterior_after: current,
            candidates_examined: examined,
        },
    })
}
