//! Fuzzy fact matching, hallucination risk and explanation metrics.

use std::collections::HashSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::causal_net::FactorContribution;
use crate::knowledge::{FactDoc, KnowledgeIndex};
use crate::text::{split_sentences, strip_fact_tags, tokenize};

pub const DEFAULT_TAU_MATCH: f64 = 0.6;
pub const DEFAULT_TOP_N: usize = 3;

/// Factor name -> human-readable synonyms.
pub type DescriptorMap = IndexMap<String, Vec<String>>;

/// Dice coefficient on lowercase alphanumeric token sets.
pub fn fuzzy_match(a: &str, b: &str) -> f64 {
    let ta: HashSet<String> = tokenize(a).into_iter().collect();
    let tb: HashSet<String> = tokenize(b).into_iter().collect();
    match (ta.is_empty(), tb.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => 2.0 * ta.intersection(&tb).count() as f64 / (ta.len() + tb.len()) as f64,
    }
}

fn explanation_sentences(explanation: &str) -> Vec<String> {
    split_sentences(&strip_fact_tags(explanation))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactMatch {
    pub fact_id: String,
    pub matched: bool,
    pub best_sentence: Option<String>,
    pub best_similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub facts: Vec<FactMatch>,
    pub matched_count: usize,
    pub hr: f64,
    /// No facts to check against; HR is reported as 0.
    pub ungroundable: bool,
}

pub fn hallucination_risk(explanation: &str, facts: &[FactDoc], tau_match: f64) -> MatchReport {
    let sentences = explanation_sentences(explanation);
    let per_fact: Vec<FactMatch> = facts
        .iter()
        .map(|f| {
            let mut best: Option<(&String, f64)> = None;
            for s in &sentences {
                let sim = fuzzy_match(&f.text, s);
                if best.is_none_or(|(_, b)| sim > b) {
                    best = Some((s, sim));
                }
            }
            let best_similarity = best.map_or(0.0, |b| b.1);
            FactMatch {
                fact_id: f.fact_id.clone(),
                matched: best_similarity >= tau_match,
                best_sentence: best.map(|b| b.0.clone()),
                best_similarity,
            }
        })
        .collect();
    let matched_count = per_fact.iter().filter(|m| m.matched).count();
    let (hr, ungroundable) =
        if facts.is_empty() { (0.0, true) } else { (1.0 - matched_count as f64 / facts.len() as f64, false) };
    MatchReport { facts: per_fact, matched_count, hr, ungroundable }
}

/// Fraction of explanation sentences supported by some fact.
pub fn groundedness(explanation: &str, facts: &[FactDoc], tau_match: f64) -> f64 {
    let sentences = explanation_sentences(explanation);
    if sentences.is_empty() || facts.is_empty() {
        return 0.0;
    }
    let grounded = sentences.iter().filter(|s| facts.iter().any(|f| fuzzy_match(&f.text, s) >= tau_match)).count();
    grounded as f64 / sentences.len() as f64
}

/// Cosine between query and explanation in the index's tf-idf space.
pub fn context_relevance(query: &str, explanation: &str, index: &KnowledgeIndex) -> f64 {
    index.cosine(query, &strip_fact_tags(explanation))
}

/// Cosine between the explanation and the concatenated fact texts.
pub fn srs(explanation: &str, facts: &[FactDoc], index: &KnowledgeIndex) -> f64 {
    let joined = facts.iter().map(|f| f.text.as_str()).collect::<Vec<_>>().join(" ");
    index.cosine(&strip_fact_tags(explanation), &joined)
}

fn contains_run(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Fraction of the top `top_n` drivers named in the explanation. A driver is
/// named when one of its synonyms fuzzy-matches a sentence at `tau_match` or
/// occurs in it as a contiguous token run. No drivers scores 1.
pub fn crc(
    explanation: &str,
    drivers: &FactorContribution,
    descriptor_map: &DescriptorMap,
    top_n: usize,
    tau_match: f64,
) -> f64 {
    let top: Vec<&str> = drivers.ranked.iter().take(top_n).map(|c| c.factor.as_str()).collect();
    if top.is_empty() {
        return 1.0;
    }
    let sentences = explanation_sentences(explanation);
    let sentence_tokens: Vec<Vec<String>> = sentences.iter().map(|s| tokenize(s)).collect();
    let covered = top
        .iter()
        .filter(|factor| {
            let mut synonyms = vec![factor.to_string()];
            if let Some(extra) = descriptor_map.get(**factor) {
                synonyms.extend(extra.iter().cloned());
            }
            synonyms.iter().any(|syn| {
                let syn_tokens = tokenize(syn);
                sentences
                    .iter()
                    .zip(&sentence_tokens)
                    .any(|(s, toks)| fuzzy_match(syn, s) >= tau_match || contains_run(toks, &syn_tokens))
            })
        })
        .count();
    covered as f64 / top.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::causal_net::Contribution;
    use crate::knowledge::build_index;
    use proptest::prelude::*;

    fn fact(id: &str, text: &str) -> FactDoc {
        FactDoc { fact_id: id.into(), text: text.into(), tags: vec![], source: String::new() }
    }

    fn four() -> Vec<FactDoc> {
        vec![
            fact("a", "Prolonged QTc raises arrhythmia risk"),
            fact("b", "Low heart rate variability indicates autonomic imbalance"),
            fact("c", "ST elevation suggests myocardial injury"),
            fact("d", "Wide QRS complexes reflect conduction delay"),
        ]
    }

    #[test]
    fn dice_examples() {
        assert_eq!(fuzzy_match("same words", "same words"), 1.0);
        assert!((fuzzy_match("qt prolongation present", "prolongation of qt") - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(fuzzy_match("alpha", "beta"), 0.0);
        assert_eq!(fuzzy_match("", ""), 1.0);
        assert_eq!(fuzzy_match("", "x"), 0.0);
    }

    #[test]
    fn hr_counts() {
        let all = four().iter().map(|f| format!("{} [Fact 1].", f.text)).collect::<String>();
        assert_eq!(hallucination_risk(&all, &four(), 0.6).hr, 0.0);
        let half = format!("{}. {}.", four()[0].text, four()[2].text);
        let r = hallucination_risk(&half, &four(), 0.6);
        assert_eq!(r.hr, 0.5);
        assert_eq!(r.matched_count, 2);
        assert_eq!(hallucination_risk("zzz qqq", &four(), 0.6).hr, 1.0);
        let r = hallucination_risk("anything", &[], 0.6);
        assert!(r.ungroundable && r.hr == 0.0);
    }

    #[test]
    fn groundedness_cases() {
        let f = four();
        assert_eq!(groundedness(&format!("{}. {}.", f[0].text, f[1].text), &f, 0.6), 1.0);
        assert_eq!(groundedness(&format!("{}. Totally unrelated words.", f[0].text), &f, 0.6), 0.5);
        assert_eq!(groundedness("x.", &[], 0.6), 0.0);
    }

    #[test]
    fn cosine_metrics() {
        let idx = build_index(&[fact("a", "qt interval long"), fact("b", "st segment")]).unwrap();
        assert!((context_relevance("qt interval", "qt interval", &idx) - 1.0).abs() < 1e-9);
        assert_eq!(srs("st segment", &[fact("a", "qt interval long")], &idx), 0.0);
        // Explanation "qt" against the single fact "qt interval long": all df=1.
        let v = srs("qt [Fact 1]", &[fact("a", "qt interval long")], &idx);
        assert!((v - 1.0 / 3.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn crc_cases() {
        let drivers = FactorContribution {
            ranked: ["qtc_bazett_ms", "rr_rmssd_ms", "st_deviation_mv"]
                .iter()
                .map(|f| Contribution { factor: f.to_string(), score: 0.1 })
                .collect(),
        };
        let map: DescriptorMap = IndexMap::from([
            ("qtc_bazett_ms".to_string(), vec!["corrected QT".to_string()]),
            ("rr_rmssd_ms".to_string(), vec!["heart rate variability".to_string()]),
            ("st_deviation_mv".to_string(), vec!["ST deviation".to_string()]),
        ]);
        let all = "The corrected QT is High. Heart rate variability is Low. ST deviation is Mid.";
        assert_eq!(crc(all, &drivers, &map, 3, 0.6), 1.0);
        assert!((crc("The corrected QT is long.", &drivers, &map, 3, 0.6) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(crc("x", &FactorContribution::default(), &map, 3, 0.6), 1.0);
    }

    proptest! {
        #[test]
        fn dice_symmetric_and_bounded(a in "[a-c ]{0,12}", b in "[a-c ]{0,12}") {
            let x = fuzzy_match(&a, &b);
            prop_assert_eq!(x, fuzzy_match(&b, &a));
            prop_assert!((0.0..=1.0).contains(&x));
        }

        #[test]
        fn appending_a_fact_never_hurts(expl in "[a-z ]{0,40}", pick in 0usize..4) {
            let f = four();
            let before = hallucination_risk(&expl, &f, 0.6);
            let extended = format!("{expl}. {}.", f[pick].text);
            let after = hallucination_risk(&extended, &f, 0.6);
            prop_assert!(after.hr <= before.hr);
            prop_assert!(groundedness(&extended, &f, 0.6) >= groundedness(&expl, &f, 0.6));
            prop_assert_eq!(before.hr, 1.0 - before.matched_count as f64 / 4.0);
        }
    }
}
