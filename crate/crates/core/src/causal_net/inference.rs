use std::collections::BTreeSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::factor::Factor;
use super::{CausalError, CausalNetwork};
use crate::biomarker::DiscreteEvidence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub variable: String,
    pub probs: IndexMap<String, f64>,
}

impl Posterior {
    /// Most probable state; ties go to the earliest declared state.
    pub fn argmax(&self) -> &str {
        let mut best: Option<(&str, f64)> = None;
        for (s, &p) in &self.probs {
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((s, p));
            }
        }
        best.map(|(s, _)| s).unwrap_or("")
    }

    pub fn prob(&self, state: &str) -> f64 {
        self.probs.get(state).copied().unwrap_or(0.0)
    }

    /// Total variation distance to another posterior over the same states.
    pub fn total_variation(&self, other: &Posterior) -> f64 {
        0.5 * self.probs.iter().map(|(s, p)| (p - other.prob(s)).abs()).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub factor: String,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FactorContribution {
    pub ranked: Vec<Contribution>,
}

impl FactorContribution {
    pub fn top(&self, k: usize) -> impl Iterator<Item = &Contribution> {
        self.ranked.iter().take(k)
    }
}

/// Maps evidence to `(node index, 0-based state)`. Factors the network does
/// not know are dropped with a warning.
pub(crate) fn resolve_evidence(
    net: &CausalNetwork,
    evidence: &DiscreteEvidence,
) -> Result<Vec<(usize, usize)>, CausalError> {
    let mut out = Vec::with_capacity(evidence.bins.len());
    for (factor, &bin) in &evidence.bins {
        let Some(idx) = net.node_index(factor) else {
            tracing::warn!(factor = %factor, "evidence variable not in network; ignored");
            continue;
        };
        let card = net.nodes[idx].cardinality();
        if bin == 0 || bin > card {
            return Err(CausalError::UnknownState { node: factor.clone(), state: bin.to_string() });
        }
        out.push((idx, bin - 1));
    }
    Ok(out)
}

fn cpt_factor(net: &CausalNetwork, node: usize) -> Result<Factor, CausalError> {
    let name = &net.nodes[node].name;
    let cpt = net.cpts.get(name).ok_or_else(|| CausalError::NotFitted(name.clone()))?;
    let mut vars = Vec::with_capacity(cpt.parents.len() + 1);
    let mut cards = Vec::with_capacity(cpt.parents.len() + 1);
    for p in &cpt.parents {
        let i = net.node_index(p).ok_or_else(|| CausalError::UnknownNode(p.clone()))?;
        vars.push(i);
        cards.push(net.nodes[i].cardinality());
    }
    vars.push(node);
    cards.push(net.nodes[node].cardinality());
    let values: Vec<f64> = cpt.table.iter().flatten().copied().collect();
    Ok(Factor::from_unordered(vars, cards, values))
}

/// Unnormalized `P(query, e)` over the query states by variable elimination.
fn joint_with_evidence(
    net: &CausalNetwork,
    evidence: &[(usize, usize)],
    query: usize,
) -> Result<Vec<f64>, CausalError> {
    // Barren-node pruning: only ancestors of the query and evidence matter.
    let mut keep = vec![false; net.nodes.len()];
    let mut stack: Vec<usize> = evidence.iter().map(|&(v, _)| v).collect();
    stack.push(query);
    while let Some(v) = stack.pop() {
        if keep[v] {
            continue;
        }
        keep[v] = true;
        for p in net.parents(&net.nodes[v].name) {
            stack.push(net.node_index(p).expect("validated parent"));
        }
    }

    let mut factors = Vec::new();
    for v in (0..net.nodes.len()).filter(|&v| keep[v]) {
        let mut f = cpt_factor(net, v)?;
        for &(ev, state) in evidence {
            if ev != query && f.contains(ev) {
                f = f.reduce(ev, state);
            }
        }
        factors.push(f);
    }
    if let Some(&(_, state)) = evidence.iter().find(|&&(v, _)| v == query) {
        let card = net.nodes[query].cardinality();
        let mut ind = vec![0.0; card];
        ind[state] = 1.0;
        factors.push(Factor { vars: vec![query], cards: vec![card], values: ind });
    }

    let evidenced: BTreeSet<usize> = evidence.iter().map(|&(v, _)| v).collect();
    let mut hidden: BTreeSet<usize> =
        (0..net.nodes.len()).filter(|&v| keep[v] && v != query && !evidenced.contains(&v)).collect();

    while !hidden.is_empty() {
        let var = pick_min_degree(net, &factors, &hidden);
        hidden.remove(&var);
        let (touching, rest): (Vec<Factor>, Vec<Factor>) = factors.into_iter().partition(|f| f.contains(var));
        factors = rest;
        if let Some(prod) = touching.into_iter().reduce(|a, b| a.product(&b)) {
            factors.push(prod.sum_out(var));
        }
    }

    let result = factors.into_iter().fold(Factor::scalar(1.0), |acc, f| acc.product(&f));
    if result.vars == [query] {
        Ok(result.values)
    } else {
        // Query absent from every factor cannot happen for a fitted net.
        Err(CausalError::NotFitted(net.nodes[query].name.clone()))
    }
}

/// Hidden variable with the fewest neighbours in the current interaction
/// graph; ties go to the lexicographically smallest node name.
fn pick_min_degree(net: &CausalNetwork, factors: &[Factor], hidden: &BTreeSet<usize>) -> usize {
    let mut best: Option<(usize, &str, usize)> = None;
    for &v in hidden {
        let mut nbrs = BTreeSet::new();
        for f in factors.iter().filter(|f| f.contains(v)) {
            nbrs.extend(f.vars.iter().copied().filter(|&u| u != v));
        }
        let deg = nbrs.len();
        let name = net.nodes[v].name.as_str();
        let better = match best {
            None => true,
            Some((bd, bn, _)) => deg < bd || (deg == bd && name < bn),
        };
        if better {
            best = Some((deg, name, v));
        }
    }
    best.expect("non-empty hidden set").2
}

/// Posterior over `query` given indexed evidence.
pub fn infer_posterior_indexed(
    net: &CausalNetwork,
    evidence: &[(usize, usize)],
    query: usize,
) -> Result<Vec<f64>, CausalError> {
    let joint = joint_with_evidence(net, evidence, query)?;
    let z: f64 = joint.iter().sum();
    if !(z > 0.0) || !z.is_finite() {
        return Err(CausalError::ZeroProbabilityEvidence);
    }
    Ok(joint.into_iter().map(|p| p / z).collect())
}

pub fn infer_posterior(
    net: &CausalNetwork,
    evidence: &DiscreteEvidence,
    query: &str,
) -> Result<Posterior, CausalError> {
    let q = net.node_index(query).ok_or_else(|| CausalError::UnknownNode(query.to_string()))?;
    let ev = resolve_evidence(net, evidence)?;
    let probs = infer_posterior_indexed(net, &ev, q)?;
    Ok(to_posterior(net, q, probs))
}

pub(crate) fn to_posterior(net: &CausalNetwork, q: usize, probs: Vec<f64>) -> Posterior {
    Posterior { variable: net.nodes[q].name.clone(), probs: net.nodes[q].states.iter().cloned().zip(probs).collect() }
}

/// Leave-one-out total variation: how far the query posterior moves when
/// each evidence factor is withheld.
pub fn rank_contributions(
    net: &CausalNetwork,
    evidence: &DiscreteEvidence,
    query: &str,
) -> Result<FactorContribution, CausalError> {
    let q = net.node_index(query).ok_or_else(|| CausalError::UnknownNode(query.to_string()))?;
    let ev = resolve_evidence(net, evidence)?;
    let full = infer_posterior_indexed(net, &ev, q)?;
    let mut ranked = Vec::new();
    for (i, &(var, _)) in ev.iter().enumerate() {
        if var == q {
            continue;
        }
        let rest: Vec<(usize, usize)> = ev.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &e)| e).collect();
        let loo = infer_posterior_indexed(net, &rest, q)?;
        let tv = 0.5 * full.iter().zip(&loo).map(|(a, b)| (a - b).abs()).sum::<f64>();
        ranked.push(Contribution { factor: net.nodes[var].name.clone(), score: tv });
    }
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.factor.cmp(&b.factor)));
    Ok(FactorContribution { ranked })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::causal_net::{Cpt, EdgeConstraints, NodeSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute-force joint enumeration.
    fn enumerate(net: &CausalNetwork, evidence: &[(usize, usize)], query: usize) -> Option<Vec<f64>> {
        let cards: Vec<usize> = net.nodes.iter().map(|n| n.cardinality()).collect();
        let total: usize = cards.iter().product();
        let mut out = vec![0.0; cards[query]];
        for mut code in 0..total {
            let mut assign = vec![0; cards.len()];
            for k in (0..cards.len()).rev() {
                assign[k] = code % cards[k];
                code /= cards[k];
            }
            if evidence.iter().any(|&(v, s)| assign[v] != s) {
                continue;
            }
            let mut p = 1.0;
            for (v, node) in net.nodes.iter().enumerate() {
                let cpt = &net.cpts[&node.name];
                let mut row = 0;
                for par in &cpt.parents {
                    let pi = net.node_index(par).unwrap();
                    row = row * cards[pi] + assign[pi];
                }
                p *= cpt.table[row][assign[v]];
            }
            out[assign[query]] += p;
        }
        let z: f64 = out.iter().sum();
        (z > 0.0).then(|| out.into_iter().map(|p| p / z).collect())
    }

    pub(crate) fn random_net(seed: u64, n: usize, max_card: usize) -> CausalNetwork {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nodes: Vec<NodeSpec> = (0..n)
            .map(|i| {
                let card = rng.random_range(2..=max_card);
                NodeSpec { name: format!("n{i}"), states: (0..card).map(|s| format!("s{s}")).collect() }
            })
            .collect();
        let mut edges = Vec::new();
        for c in 1..n {
            for p in 0..c {
                if rng.random_bool(0.4)
                    && edges.iter().filter(|(_, cc): &&(String, String)| *cc == nodes[c].name).count() < 3
                {
                    edges.push((nodes[p].name.clone(), nodes[c].name.clone()));
                }
            }
        }
        let outcome = nodes[n - 1].name.clone();
        let mut net = CausalNetwork::structure(nodes, edges, outcome, EdgeConstraints::default()).unwrap();
        for node in net.nodes.clone() {
            let parents: Vec<String> = net.parents(&node.name).into_iter().map(String::from).collect();
            let rows: usize = parents.iter().map(|p| net.node(p).unwrap().cardinality()).product();
            let table = (0..rows)
                .map(|_| {
                    let raw: Vec<f64> = (0..node.cardinality()).map(|_| rng.random::<f64>() + 0.01).collect();
                    let s: f64 = raw.iter().sum();
                    let mut row: Vec<f64> = raw.iter().map(|r| r / s).collect();
                    let head: f64 = row[..row.len() - 1].iter().sum();
                    *row.last_mut().unwrap() = 1.0 - head;
                    row
                })
                .collect();
            net.cpts.insert(node.name.clone(), Cpt { parents, table });
        }
        net
    }

    fn chain() -> CausalNetwork {
        CausalNetwork::with_cpts(
            vec![NodeSpec::new("A", &["a1", "a2"]), NodeSpec::new("y", &["y1", "y2"])],
            vec![("A", vec![], vec![vec![1.0, 0.0]]), ("y", vec!["A"], vec![vec![1.0, 0.0], vec![0.5, 0.5]])],
            "y",
        )
        .unwrap()
    }

    #[test]
    fn deterministic_chain() {
        let p = infer_posterior(&chain(), &DiscreteEvidence::new("r"), "y").unwrap();
        assert_eq!(p.prob("y1"), 1.0);
        assert_eq!(p.prob("y2"), 0.0);
        assert_eq!(p.argmax(), "y1");
    }

    #[test]
    fn impossible_evidence_is_reported() {
        let ev = DiscreteEvidence::new("r").with("A", 2, "a2");
        assert_eq!(infer_posterior(&chain(), &ev, "y"), Err(CausalError::ZeroProbabilityEvidence));
    }

    #[test]
    fn parents_fixed_reads_cpt_row() {
        let net = random_net(3, 5, 3);
        let y = net.outcome.clone();
        let parents: Vec<String> = net.parents(&y).into_iter().map(String::from).collect();
        let mut ev = DiscreteEvidence::new("r");
        let mut row = 0;
        for p in &parents {
            let card = net.node(p).unwrap().cardinality();
            ev = ev.with(p, card, "x");
            row = row * card + (card - 1);
        }
        let post = infer_posterior(&net, &ev, &y).unwrap();
        for (k, p) in post.probs.values().enumerate() {
            assert!((p - net.cpts[&y].table[row][k]).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_evidence_variable_ignored_and_bad_bin_rejected() {
        let net = chain();
        let ev = DiscreteEvidence::new("r").with("zzz", 1, "x");
        assert!(infer_posterior(&net, &ev, "y").is_ok());
        let ev = DiscreteEvidence::new("r").with("A", 3, "x");
        assert!(matches!(infer_posterior(&net, &ev, "y"), Err(CausalError::UnknownState { .. })));
        assert!(matches!(infer_posterior(&net, &DiscreteEvidence::new("r"), "nope"), Err(CausalError::UnknownNode(_))));
    }

    #[test]
    fn contribution_of_independent_factor_is_zero() {
        let net = CausalNetwork::with_cpts(
            vec![NodeSpec::new("A", &["L", "H"]), NodeSpec::new("B", &["L", "H"]), NodeSpec::new("y", &["N", "X"])],
            vec![
                ("A", vec![], vec![vec![0.5, 0.5]]),
                ("B", vec![], vec![vec![0.5, 0.5]]),
                ("y", vec!["A"], vec![vec![0.9, 0.1], vec![0.2, 0.8]]),
            ],
            "y",
        )
        .unwrap();
        let ev = DiscreteEvidence::new("r").with("A", 2, "H").with("B", 1, "L");
        let c = rank_contributions(&net, &ev, "y").unwrap();
        assert_eq!(c.ranked[0].factor, "A");
        assert!(c.ranked[0].score > 0.0);
        assert_eq!(c.ranked[1].factor, "B");
        assert!(c.ranked[1].score.abs() < 1e-12);
    }

    #[test]
    fn contributions_match_enumeration_on_random_nets() {
        for seed in 0..20 {
            let net = random_net(100 + seed, 5, 3);
            let q = net.node_index(&net.outcome).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut ev = DiscreteEvidence::new("r");
            let mut idx = Vec::new();
            for v in 0..q {
                if rng.random_bool(0.7) {
                    let s = rng.random_range(0..net.nodes[v].cardinality());
                    ev = ev.with(&net.nodes[v].name, s + 1, "x");
                    idx.push((v, s));
                }
            }
            let c = rank_contributions(&net, &ev, &net.outcome).unwrap();
            let full = enumerate(&net, &idx, q).unwrap();
            for contrib in &c.ranked {
                let v = net.node_index(&contrib.factor).unwrap();
                let rest: Vec<_> = idx.iter().copied().filter(|&(u, _)| u != v).collect();
                let loo = enumerate(&net, &rest, q).unwrap();
                let tv = 0.5 * full.iter().zip(&loo).map(|(a, b)| (a - b).abs()).sum::<f64>();
                assert!((tv - contrib.score).abs() < 1e-9);
            }
            assert!(c.ranked.windows(2).all(|w| w[0].score >= w[1].score));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn elimination_matches_enumeration(seed in 0u64..10_000, n in 2usize..=6, ev_seed in 0u64..1000) {
            let net = random_net(seed, n, 4);
            let mut rng = ChaCha8Rng::seed_from_u64(ev_seed);
            let query = rng.random_range(0..n);
            let mut ev = Vec::new();
            for v in 0..n {
                if rng.random_bool(0.4) {
                    ev.push((v, rng.random_range(0..net.nodes[v].cardinality())));
                }
            }
            let got = infer_posterior_indexed(&net, &ev, query).unwrap();
            let want = enumerate(&net, &ev, query).unwrap();
            for (g, w) in got.iter().zip(&want) {
                prop_assert!((g - w).abs() <= 1e-9);
            }
        }
    }
}
