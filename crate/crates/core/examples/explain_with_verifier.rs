//! Generates an explanation, scores its grounding and shows the fallback gate.

use carex::agents::{respond, AgentError, AgentMessage, GateConfig, Generator, OfflineGenerator, CAUSAL_PREFIX};
use carex::causal_net::{infer_posterior, rank_contributions};
use carex::knowledge::{build_index, enrich_query, retrieve};
use carex::pipeline::demo_corpus;
use carex::synthetic::{sample_labeled, SyntheticSpec, DEFAULT_QUERY};

/// Invents claims when given causal factors; defers to the template otherwise.
struct Drifting;

impl Generator for Drifting {
    fn generate(&self, prompt: &str) -> Result<String, AgentError> {
        if !prompt.contains(&format!("{CAUSAL_PREFIX}None")) {
            Ok("The patient shows a rare channelopathy. Lithium toxicity explains the pattern.".into())
        } else {
            OfflineGenerator.generate(prompt)
        }
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SyntheticSpec::default();
    let net = &spec.network;
    let ev = sample_labeled(&spec, 1, 9)?.rows.remove(0).evidence;
    let prediction = infer_posterior(net, &ev, &net.outcome)?;
    let drivers = rank_contributions(net, &ev, &net.outcome)?;
    let index = build_index(&demo_corpus())?;
    let q = enrich_query(DEFAULT_QUERY, &drivers, &ev, prediction.argmax(), 3);
    let message = AgentMessage {
        query: DEFAULT_QUERY.into(),
        history: None,
        evidence: ev,
        prediction: Some(prediction),
        retrieved: retrieve(&index, &q, 5),
        drivers,
        counterfactual: None,
    };

    let gate = GateConfig::default();
    for (name, g) in [("offline", &OfflineGenerator as &dyn Generator), ("drifting", &Drifting)] {
        let r = respond(&message, g, &gate)?;
        println!(
            "== {name}: initial HR {:.2}, final HR {:.2}, fallback {}",
            r.initial_hr, r.payload.hallucination_score, r.payload.used_fallback
        );
        println!("{}\n", r.payload.explanation);
    }
    Ok(())
}
