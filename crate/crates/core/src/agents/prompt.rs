use std::fmt::Write;

use super::AgentMessage;
use crate::counterfactual::CounterfactualResult;
use crate::grounding::DEFAULT_TOP_N;

pub const QUERY_PREFIX: &str = "Patient Query: ";
pub const CAUSAL_PREFIX: &str = "Key Causal Factors (from VAE/Graph): ";
pub const PREDICTION_PREFIX: &str = "Predicted Diagnosis: ";
pub const COUNTERFACTUAL_PREFIX: &str = "Counterfactual: ";
pub const HISTORY_PREFIX: &str = "Longitudinal Change: ";
pub const FACTS_HEADER: &str = "Retrieved Medical Facts (RAG):";
pub const INSTRUCTION: &str =
    "Explain the prediction clearly and medically grounded, and attach citations using fact tags (e.g., [Fact 1]).";

/// Prompt with the top `DEFAULT_TOP_N` drivers.
pub fn build_prompt(m: &AgentMessage, rag_only: bool) -> String {
    build_prompt_with(m, rag_only, DEFAULT_TOP_N)
}

/// Renders the message. In `rag_only` mode the causal factors read `None`
/// and the counterfactual and longitudinal lines are omitted.
pub fn build_prompt_with(m: &AgentMessage, rag_only: bool, max_drivers: usize) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{QUERY_PREFIX}{}", m.query);

    let causal: Vec<String> = if rag_only {
        Vec::new()
    } else {
        m.drivers
            .ranked
            .iter()
            .filter_map(|c| m.evidence.labels.get(&c.factor).map(|l| format!("{}={l}", c.factor)))
            .take(max_drivers)
            .collect()
    };
    let causal = if causal.is_empty() { "None".to_string() } else { causal.join(", ") };
    let _ = writeln!(out, "{CAUSAL_PREFIX}{causal}");

    if let Some(pred) = &m.prediction {
        let state = pred.argmax();
        let _ = writeln!(out, "{PREDICTION_PREFIX}{state} (p={:.2})", pred.prob(state));
    }
    if !rag_only {
        if let Some(cf) = &m.counterfactual {
            let _ = writeln!(out, "{COUNTERFACTUAL_PREFIX}{}", describe_counterfactual(cf));
        }
        if let Some(h) = &m.history {
            let mut parts: Vec<String> = h.delta.deltas.iter().map(|(f, d)| format!("{f} {d:+.1}")).collect();
            if parts.is_empty() {
                parts.push("no comparable factors".into());
            }
            let kind = if h.surrogate { "surrogate" } else { "prior" };
            let _ =
                writeln!(out, "{HISTORY_PREFIX}{} vs {kind} record {}", parts.join(", "), h.delta.baseline_record_id);
        }
    }

    let _ = writeln!(out, "{FACTS_HEADER}");
    for (i, hit) in m.retrieved.hits.iter().enumerate() {
        let _ = writeln!(out, "[Fact {}] {}", i + 1, hit.doc.text);
    }
    out.push_str(INSTRUCTION);
    out
}

pub fn describe_counterfactual(cf: &CounterfactualResult) -> String {
    if !cf.achieved {
        return format!("no edit among {} candidates changes the prediction to {}", cf.candidates_examined, cf.target);
    }
    if cf.edits.is_empty() {
        return format!("{} is already the predicted state", cf.target);
    }
    let edits: Vec<String> =
        cf.edits.iter().map(|e| format!("{} from {} to {}", e.factor, e.from_label, e.to_label)).collect();
    format!(
        "setting {} changes the prediction to {} (p={:.2})",
        edits.join(" and "),
        cf.target,
        cf.posterior_after.prob(&cf.target)
    )
}

#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct ParsedPrompt {
    pub drivers: Vec<(String, String)>,
    pub prediction: Option<(String, String)>,
    pub counterfactual: Option<String>,
    pub facts: Vec<String>,
}

pub(crate) fn parse_prompt(prompt: &str) -> ParsedPrompt {
    let mut p = ParsedPrompt::default();
    let mut in_facts = false;
    for line in prompt.lines() {
        if in_facts {
            if let Some(rest) = line.strip_prefix("[Fact ") {
                if let Some((_, text)) = rest.split_once("] ") {
                    p.facts.push(text.to_string());
                }
                continue;
            }
        }
        if let Some(rest) = line.strip_prefix(CAUSAL_PREFIX) {
            if rest != "None" {
                p.drivers = rest
                    .split(", ")
                    .filter_map(|d| d.split_once('='))
                    .map(|(f, l)| (f.to_string(), l.to_string()))
                    .collect();
            }
        } else if let Some(rest) = line.strip_prefix(PREDICTION_PREFIX) {
            if let Some((state, prob)) = rest.split_once(" (p=") {
                p.prediction = Some((state.to_string(), prob.trim_end_matches(')').to_string()));
            }
        } else if let Some(rest) = line.strip_prefix(COUNTERFACTUAL_PREFIX) {
            p.counterfactual = Some(rest.to_string());
        } else if line == FACTS_HEADER {
            in_facts = true;
        }
    }
    p
}

/// One sentence for the prediction, one per driver, one for the
/// counterfactual, and one quoting each fact with its tag.
pub(crate) fn render_template(p: &ParsedPrompt) -> String {
    let mut sentences = Vec::new();
    if let Some((state, prob)) = &p.prediction {
        sentences.push(format!("The predicted diagnosis is {state} with probability {prob}."));
    }
    for (f, l) in &p.drivers {
        sentences.push(format!("Key factor {f} is {l}."));
    }
    if let Some(cf) = &p.counterfactual {
        sentences.push(format!("Counterfactual check: {cf}."));
    }
    for (i, fact) in p.facts.iter().enumerate() {
        let text = fact.trim().trim_end_matches(['.', '!', '?']);
        sentences.push(format!("{text} [Fact {}].", i + 1));
    }
    sentences.join(" ")
}
