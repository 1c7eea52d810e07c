use super::*;
use crate::causal_net::{Contribution, NodeSpec};
use crate::knowledge::{FactDoc, RetrievedFact};
use crate::signal_io::EcgRecord;
use crate::text::split_sentences;

fn fact(id: &str, text: &str) -> RetrievedFact {
    RetrievedFact {
        doc: FactDoc { fact_id: id.into(), text: text.into(), tags: vec![], source: String::new() },
        score: 0.5,
    }
}

fn posterior(pairs: &[(&str, f64)]) -> Posterior {
    Posterior { variable: "y".into(), probs: pairs.iter().map(|(s, p)| (s.to_string(), *p)).collect() }
}

fn message(n_facts: usize) -> AgentMessage {
    let facts = [
        "Prolonged QTc raises arrhythmia risk",
        "Reduced RMSSD reflects low vagal tone",
        "ST deviation may indicate ischemia",
        "Wide QRS suggests conduction delay",
    ];
    AgentMessage {
        query: "why arrhythmia".into(),
        history: None,
        evidence: DiscreteEvidence::new("r").with("qtc_bazett_ms", 3, "High"),
        prediction: Some(posterior(&[("NORM", 0.1), ("ARRH", 0.9)])),
        retrieved: RetrievalResult {
            hits: facts.iter().take(n_facts).enumerate().map(|(i, t)| fact(&format!("f{i}"), t)).collect(),
            enriched_query: "why arrhythmia qtc_bazett_ms High ARRH".into(),
            empty_query: false,
        },
        drivers: FactorContribution { ranked: vec![Contribution { factor: "qtc_bazett_ms".into(), score: 0.3 }] },
        counterfactual: None,
    }
}

struct Stub(&'static str);

impl Generator for Stub {
    fn generate(&self, _prompt: &str) -> Result<String, AgentError> {
        Ok(self.0.to_string())
    }
}

/// Fact-free text first, then fails.
struct FailSecond(std::sync::atomic::AtomicUsize);

impl Generator for FailSecond {
    fn generate(&self, _prompt: &str) -> Result<String, AgentError> {
        if self.0.fetch_add(1, std::sync::atomic::Ordering::SeqCst) == 0 {
            Ok("Nothing relevant".into())
        } else {
            Err(AgentError::RemoteUnavailable("down".into()))
        }
    }
}

#[test]
fn prompt_layout() {
    let m = message(2);
    let p = build_prompt(&m, false);
    let lines: Vec<&str> = p.lines().collect();
    assert_eq!(lines[0], "Patient Query: why arrhythmia");
    assert_eq!(lines[1], "Key Causal Factors (from VAE/Graph): qtc_bazett_ms=High");
    assert!(lines.contains(&"[Fact 1] Prolonged QTc raises arrhythmia risk"));
    assert!(lines.contains(&"[Fact 2] Reduced RMSSD reflects low vagal tone"));
    assert_eq!(*lines.last().unwrap(), INSTRUCTION);
    assert_eq!(p, build_prompt(&m, false));
    let r = build_prompt(&m, true);
    assert!(r.lines().any(|l| l == "Key Causal Factors (from VAE/Graph): None"));
}

#[test]
fn offline_template_sentences() {
    let m = message(2);
    let text = OfflineGenerator.generate(&build_prompt(&m, false)).unwrap();
    let sentences = split_sentences(&text);
    assert_eq!(sentences.len(), 4, "{text}");
    assert!(text.contains("Prolonged QTc raises arrhythmia risk"));
    assert!(text.contains("Reduced RMSSD reflects low vagal tone"));
    assert!(text.contains("qtc_bazett_ms is High"));
    assert!(text.contains("ARRH with probability 0.90"));
}

#[test]
fn offline_respond_is_grounded() {
    let r = respond(&message(4), &OfflineGenerator, &GateConfig::default()).unwrap();
    assert_eq!(r.payload.hallucination_score, 0.0);
    assert!(!r.payload.used_fallback);
    assert!(!r.payload.explanation.contains(FALLBACK_NOTE));
}

#[test]
fn gate_fires_on_fact_free_text() {
    let r = respond(&message(4), &Stub("Something unrelated entirely"), &GateConfig::default()).unwrap();
    assert_eq!(r.initial_hr, 1.0);
    assert!(r.payload.used_fallback);
    assert!(r.payload.explanation.ends_with(FALLBACK_NOTE));
    assert!(r.payload.raw_rag_only.is_some());

    let off = GateConfig { fallback_enabled: false, ..GateConfig::default() };
    let r = respond(&message(4), &Stub("Something unrelated entirely"), &off).unwrap();
    assert!(!r.payload.used_fallback);
    assert_eq!(r.payload.hallucination_score, 1.0);
    assert!(!r.payload.explanation.contains(FALLBACK_NOTE));
}

#[test]
fn gate_threshold_is_strict() {
    // Two of four facts quoted: HR = 0.5 exactly, which does not exceed 0.5.
    let text = "Prolonged QTc raises arrhythmia risk. Reduced RMSSD reflects low vagal tone.";
    let stub = Stub(Box::leak(text.to_string().into_boxed_str()));
    let r = respond(&message(4), &stub, &GateConfig::default()).unwrap();
    assert_eq!(r.initial_hr, 0.5);
    assert!(!r.payload.used_fallback);
}

#[test]
fn ungroundable_forces_fallback_and_failure_is_a_warning() {
    let r = respond(&message(0), &OfflineGenerator, &GateConfig::default()).unwrap();
    assert!(r.report.ungroundable);
    assert!(r.payload.used_fallback);

    let r = respond(&message(4), &FailSecond(Default::default()), &GateConfig::default()).unwrap();
    assert!(!r.payload.used_fallback);
    assert_eq!(r.payload.explanation, "Nothing relevant");
    assert!(r.payload.warnings.iter().any(|w| w.contains("fallback generation failed")));
}

#[test]
fn target_resolution() {
    let lex = ScpLexicon::default();
    let states = vec!["MI".to_string(), "Normal".to_string()];
    let post = posterior(&[("MI", 0.7), ("Normal", 0.3)]);
    assert_eq!(resolve_target("what if not MI", &post, &states, &lex).as_deref(), Some("Normal"));
    assert_eq!(resolve_target("explain this", &post, &states, &lex).as_deref(), Some("Normal"));
    let three = vec!["A".to_string(), "B".to_string(), "C".to_string()];
    let post3 = posterior(&[("A", 0.5), ("B", 0.2), ("C", 0.3)]);
    assert_eq!(resolve_target("could this be B", &post3, &three, &lex).as_deref(), Some("B"));
    assert_eq!(resolve_target("why", &post3, &three, &lex).as_deref(), Some("C"));
}

#[test]
fn diagnosis_runs_probe() {
    let net = CausalNetwork::with_cpts(
        vec![NodeSpec::new("A", &["Low", "High"]), NodeSpec::new("y", &["NORM", "ARRH"])],
        vec![("A", vec![], vec![vec![0.5, 0.5]]), ("y", vec!["A"], vec![vec![0.9, 0.1], vec![0.2, 0.8]])],
        "y",
    )
    .unwrap();
    let ev = DiscreteEvidence::new("r").with("A", 2, "High");
    let d = diagnosis_agent(&net, &ev, "explain", &ScpLexicon::default(), Some(1)).unwrap();
    assert_eq!(d.posterior.argmax(), "ARRH");
    assert_eq!(d.target.as_deref(), Some("NORM"));
    assert!(d.counterfactual.unwrap().achieved);
    let d = diagnosis_agent(&net, &ev, "explain", &ScpLexicon::default(), None).unwrap();
    assert!(d.counterfactual.is_none());
}

fn vector(id: &str, qt: f64, hr: f64) -> BiomarkerVector {
    let schema = vec!["qt".to_string(), "hr".to_string()];
    let mut v = BiomarkerVector::all_missing(id, &schema);
    v.set("qt", Some(qt), crate::biomarker::Quality::Ok);
    v.set("hr", Some(hr), crate::biomarker::Quality::Ok);
    v
}

fn flat_record(id: &str) -> EcgRecord {
    EcgRecord::new(id, 100.0, vec!["II".into()], vec![vec![0.0; 300]]).unwrap()
}

#[test]
fn history_prior_surrogate_and_absent() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = RecordStore::open(dir.path()).unwrap();
    store.store_record(&flat_record("a1").with_patient("p1", Some(10))).unwrap();
    store.store_record(&flat_record("a2").with_patient("p1", Some(20))).unwrap();
    store.store_record(&flat_record("b1")).unwrap();
    let mut vectors = IndexMap::new();
    vectors.insert("a1".to_string(), vector("a1", 400.0, 60.0));
    vectors.insert("a2".to_string(), vector("a2", 420.0, 62.0));
    vectors.insert("b1".to_string(), vector("b1", 421.0, 61.0));

    let h = history_agent(&store, &vectors, "a2").unwrap();
    assert!(!h.surrogate);
    assert_eq!(h.delta.baseline_record_id, "a1");
    assert_eq!(h.delta.deltas["qt"], 20.0);

    let h = history_agent(&store, &vectors, "b1").unwrap();
    assert!(h.surrogate);
    assert_eq!(h.delta.baseline_record_id, "a2");

    let only: IndexMap<_, _> =
        vectors.iter().filter(|(k, _)| *k == "b1").map(|(k, v)| (k.clone(), v.clone())).collect();
    assert!(history_agent(&store, &only, "b1").is_none());
}
