use std::collections::BTreeSet;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::grounding::fuzzy_match;
use crate::text::split_sentences;

pub const DEFAULT_TAU_SCP: f64 = 0.85;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScpEntry {
    pub label: String,
    pub keywords: Vec<String>,
}

/// SCP code -> label and keyword list.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScpLexicon {
    pub entries: IndexMap<String, ScpEntry>,
}

impl ScpLexicon {
    pub fn new(entries: IndexMap<String, ScpEntry>) -> Result<Self, EvalError> {
        let lex = ScpLexicon { entries };
        lex.validate()?;
        Ok(lex)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        for (code, e) in &self.entries {
            if code.trim().is_empty() {
                return Err(EvalError::InvalidLexicon("empty SCP code".into()));
            }
            if e.keywords.iter().any(|k| k.trim().is_empty()) {
                return Err(EvalError::InvalidLexicon(format!("{code} has an empty keyword")));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::io(path, e))?;
        let lex: ScpLexicon = serde_json::from_str(&text)?;
        lex.validate()?;
        Ok(lex)
    }

    /// Phrases that name `code`: the code itself, its label and keywords.
    pub fn synonyms(&self, code: &str) -> Vec<String> {
        let mut out = vec![code.to_string()];
        if let Some(e) = self.entries.get(code) {
            out.push(e.label.clone());
            out.extend(e.keywords.iter().cloned());
        }
        out
    }
}

/// Codes with a keyword that appears verbatim (case-insensitive) in the text
/// or fuzzy-matches one of its sentences at `tau`.
pub fn map_text_to_scp(text: &str, lexicon: &ScpLexicon, tau: f64) -> BTreeSet<String> {
    let lower = text.to_lowercase();
    let sentences = split_sentences(text);
    lexicon
        .entries
        .iter()
        .filter(|(_, e)| {
            e.keywords
                .iter()
                .any(|k| lower.contains(&k.to_lowercase()) || sentences.iter().any(|s| fuzzy_match(k, s) >= tau))
        })
        .map(|(c, _)| c.clone())
        .collect()
}
