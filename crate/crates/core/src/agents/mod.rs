//! History, diagnosis and response agents with the hallucination gate.

mod generator;
mod prompt;

use std::collections::HashSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::biomarker::{delta, BiomarkerDelta, BiomarkerVector, DiscreteEvidence};
use crate::causal_net::{
    infer_posterior, rank_contributions, CausalError, CausalNetwork, FactorContribution, Posterior,
};
use crate::counterfactual::{find_counterfactual, CounterfactualResult};
use crate::eval::ScpLexicon;
use crate::grounding::{hallucination_risk, MatchReport, DEFAULT_TAU_MATCH, DEFAULT_TOP_N};
use crate::knowledge::RetrievalResult;
use crate::signal_io::RecordStore;
use crate::text::tokenize;

pub use generator::{
    make_generator, Generator, GeneratorConfig, GeneratorMode, OfflineGenerator, RemoteGenerator, DEFAULT_API_KEY_ENV,
};
pub use prompt::{
    build_prompt, build_prompt_with, describe_counterfactual, CAUSAL_PREFIX, FACTS_HEADER, INSTRUCTION, QUERY_PREFIX,
};

pub const FALLBACK_NOTE: &str = "(Note: Fallback used due to high hallucination risk.)";
pub const DEFAULT_HR_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("generator unavailable: {0}")]
    RemoteUnavailable(String),
    #[error("generator request timed out")]
    Timeout,
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Causal(#[from] CausalError),
}

/// Longitudinal change against a prior record of the same patient, or
/// against the most similar other record when there is none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryContext {
    pub delta: BiomarkerDelta,
    pub surrogate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMessage {
    pub query: String,
    pub history: Option<HistoryContext>,
    pub evidence: DiscreteEvidence,
    /// Outcome posterior; the prediction is its argmax.
    pub prediction: Option<Posterior>,
    pub retrieved: RetrievalResult,
    pub drivers: FactorContribution,
    pub counterfactual: Option<CounterfactualResult>,
}

impl AgentMessage {
    pub fn predicted_state(&self) -> Option<&str> {
        self.prediction.as_ref().map(Posterior::argmax)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationPayload {
    pub explanation: String,
    pub hallucination_score: f64,
    pub used_fallback: bool,
    pub raw_with_causal: String,
    pub raw_rag_only: Option<String>,
    pub warnings: Vec<String>,
}

/// Prior record of the patient if one exists, else the nearest other
/// record by Euclidean distance on z-scored factors.
pub fn history_agent(
    store: &RecordStore,
    vectors: &IndexMap<String, BiomarkerVector>,
    current_id: &str,
) -> Option<HistoryContext> {
    let current = vectors.get(current_id)?;
    if let Some(entry) = store.entry(current_id) {
        if let (Some(pid), Some(t)) = (&entry.patient_id, entry.acquired_at) {
            let prior = store.list_patient_history(pid).into_iter().rfind(|id| {
                id != current_id
                    && store.entry(id).and_then(|e| e.acquired_at).is_some_and(|ti| ti < t)
                    && vectors.contains_key(id)
            });
            if let Some(prior) = prior {
                if let Ok(d) = delta(&vectors[&prior], current) {
                    return Some(HistoryContext { delta: d, surrogate: false });
                }
            }
        }
    }
    let nearest = nearest_neighbour(vectors, current_id)?;
    delta(&vectors[nearest], current).ok().map(|d| HistoryContext { delta: d, surrogate: true })
}

fn nearest_neighbour<'a>(vectors: &'a IndexMap<String, BiomarkerVector>, current_id: &str) -> Option<&'a str> {
    let current = &vectors[current_id];
    let factors: Vec<&str> = current.schema().collect();
    let stats: Vec<Option<(f64, f64)>> = factors
        .iter()
        .map(|f| {
            let xs: Vec<f64> = vectors.values().filter_map(|v| v.ok_value(f)).collect();
            if xs.len() < 2 {
                return None;
            }
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
            (sd > 0.0).then_some((mean, sd))
        })
        .collect();
    let mut best: Option<(f64, &str)> = None;
    for (id, v) in vectors {
        if id == current_id || !v.same_schema(current) {
            continue;
        }
        let mut sum = 0.0;
        let mut shared = 0;
        for (f, st) in factors.iter().zip(&stats) {
            let (Some((_, sd)), Some(a), Some(b)) = (st, current.ok_value(f), v.ok_value(f)) else {
                continue;
            };
            sum += ((a - b) / sd).powi(2);
            shared += 1;
        }
        if shared == 0 {
            continue;
        }
        let d = sum.sqrt();
        if best.is_none_or(|(bd, bid)| d < bd || (d == bd && id.as_str() < bid)) {
            best = Some((d, id));
        }
    }
    best.map(|b| b.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub posterior: Posterior,
    pub drivers: FactorContribution,
    pub counterfactual: Option<CounterfactualResult>,
    pub target: Option<String>,
}

const NEGATIONS: [&str; 6] = ["not", "no", "without", "non", "absent", "rule"];

/// Counterfactual target named by the query. A negated mention of a state
/// asks for the most probable other state; a positive mention of a state
/// other than the prediction asks for that state; otherwise the runner-up.
pub fn resolve_target(query: &str, posterior: &Posterior, states: &[String], lexicon: &ScpLexicon) -> Option<String> {
    let argmax = posterior.argmax().to_string();
    let runner_up = |exclude: &HashSet<&str>| -> Option<String> {
        let mut best: Option<(&str, f64)> = None;
        for s in states {
            if exclude.contains(s.as_str()) {
                continue;
            }
            let p = posterior.prob(s);
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((s, p));
            }
        }
        best.map(|b| b.0.to_string())
    };
    let tokens = tokenize(query);
    let mut negated = None;
    let mut named = None;
    for s in states {
        for syn in lexicon.synonyms(s) {
            let st = tokenize(&syn);
            if st.is_empty() {
                continue;
            }
            for start in 0..tokens.len().saturating_sub(st.len() - 1) {
                if tokens[start..start + st.len()] != st[..] {
                    continue;
                }
                let lo = start.saturating_sub(3);
                if tokens[lo..start].iter().any(|t| NEGATIONS.contains(&t.as_str())) {
                    negated.get_or_insert(s.clone());
                } else if s != &argmax {
                    named.get_or_insert(s.clone());
                }
            }
        }
    }
    if let Some(n) = negated {
        let mut ex = HashSet::new();
        ex.insert(n.as_str());
        return runner_up(&ex);
    }
    if named.is_some() {
        return named;
    }
    runner_up(&HashSet::from([argmax.as_str()]))
}

/// Posterior, ranked drivers and, when enabled, a counterfactual probe
/// toward the state resolved from the query.
pub fn diagnosis_agent(
    net: &CausalNetwork,
    evidence: &DiscreteEvidence,
    query: &str,
    lexicon: &ScpLexicon,
    counterfactual_max_edits: Option<usize>,
) -> Result<Diagnosis, AgentError> {
    let posterior = infer_posterior(net, evidence, &net.outcome)?;
    let drivers = rank_contributions(net, evidence, &net.outcome)?;
    let (counterfactual, target) = match counterfactual_max_edits {
        Some(max_edits) => {
            let states = &net.outcome_node().states;
            match resolve_target(query, &posterior, states, lexicon) {
                Some(t) => (Some(find_counterfactual(net, evidence, &t, max_edits)?), Some(t)),
                None => (None, None),
            }
        }
        None => (None, None),
    };
    Ok(Diagnosis { posterior, drivers, counterfactual, target })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub fallback_enabled: bool,
    pub hr_threshold: f64,
    pub tau_match: f64,
    pub prompt_drivers: usize,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            fallback_enabled: true,
            hr_threshold: DEFAULT_HR_THRESHOLD,
            tau_match: DEFAULT_TAU_MATCH,
            prompt_drivers: DEFAULT_TOP_N,
        }
    }
}

/// Payload plus the intermediate state kept for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub payload: ExplanationPayload,
    pub prompt: String,
    pub prompt_rag_only: Option<String>,
    pub initial_hr: f64,
    pub report: MatchReport,
}

/// Generates with the causal prompt, scores hallucination risk, and when the
/// gate fires regenerates from the retrieval-only prompt. The gate fires when
/// fallback is enabled and either the initial risk exceeds the threshold or
/// there were no facts to ground against.
pub fn respond(m: &AgentMessage, generator: &dyn Generator, gate: &GateConfig) -> Result<Response, AgentError> {
    let facts = m.retrieved.facts();
    let prompt = build_prompt_with(m, false, gate.prompt_drivers);
    let raw_with_causal = generator.generate(&prompt)?;
    let initial = hallucination_risk(&raw_with_causal, &facts, gate.tau_match);
    let fire = gate.fallback_enabled && (initial.hr > gate.hr_threshold || initial.ungroundable);
    let mut warnings = Vec::new();
    if initial.ungroundable {
        warnings.push("no retrieved facts; explanation is ungroundable".to_string());
    }

    let mut explanation = raw_with_causal.clone();
    let mut raw_rag_only = None;
    let mut prompt_rag_only = None;
    let mut report = initial.clone();
    if fire {
        let p = build_prompt_with(m, true, gate.prompt_drivers);
        match generator.generate(&p) {
            Ok(text) => {
                explanation = format!("{}\n{FALLBACK_NOTE}", text.trim_end());
                report = hallucination_risk(&explanation, &facts, gate.tau_match);
                raw_rag_only = Some(text);
            }
            Err(e) => warnings.push(format!("fallback generation failed: {e}")),
        }
        prompt_rag_only = Some(p);
    }
    Ok(Response {
        payload: ExplanationPayload {
            explanation,
            hallucination_score: report.hr,
            used_fallback: raw_rag_only.is_some(),
            raw_with_causal,
            raw_rag_only,
            warnings,
        },
        prompt,
        prompt_rag_only,
        initial_hr: initial.hr,
        report,
    })
}

#[cfg(test)]
mod tests;
