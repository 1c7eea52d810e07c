//! Pipeline configuration (JSON).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::GeneratorConfig;
use crate::biomarker::default_schema;
use crate::causal_net::EdgeConstraints;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalBackend {
    #[default]
    Tfidf,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub k: usize,
    pub top_m: usize,
    pub tau_match: f64,
    pub backend: RetrievalBackend,
    pub embed_endpoint: Option<String>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig { k: 5, top_m: 3, tau_match: 0.6, backend: RetrievalBackend::Tfidf, embed_endpoint: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifierConfig {
    pub hr_threshold: f64,
    pub fallback_enabled: bool,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig { hr_threshold: 0.5, fallback_enabled: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainConfig {
    /// Drivers named in the prompt and counted by CRC.
    pub top_n: usize,
    pub counterfactual_max_edits: usize,
    pub tau_scp: f64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig { top_n: 3, counterfactual_max_edits: 1, tau_scp: 0.85 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub store: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub descriptors: Option<PathBuf>,
    /// Directory holding `model.json` and `index.json`.
    pub artifacts: Option<PathBuf>,
    /// Precomputed biomarker CSV used instead of waveform extraction.
    pub features: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub factors: Vec<String>,
    pub num_bins: usize,
    pub pseudocount: f64,
    pub max_parents: usize,
    pub outcome_node: String,
    /// Outcome states in declaration order; empty means the sorted set of
    /// training labels.
    pub outcome_states: Vec<String>,
    pub priors: EdgeConstraints,
    pub retrieval: RetrievalConfig,
    pub verifier: VerifierConfig,
    pub explain: ExplainConfig,
    pub generator: GeneratorConfig,
    pub paths: PathsConfig,
    pub seed: u64,
    pub cors_origin: Option<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            factors: default_schema(),
            num_bins: 3,
            pseudocount: 1.0,
            max_parents: 3,
            outcome_node: "diagnosis".into(),
            outcome_states: Vec::new(),
            priors: EdgeConstraints::default(),
            retrieval: RetrievalConfig::default(),
            verifier: VerifierConfig::default(),
            explain: ExplainConfig::default(),
            generator: GeneratorConfig::default(),
            paths: PathsConfig::default(),
            seed: 42,
            cors_origin: None,
        }
    }
}

fn unit_interval(name: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!("{name} must be in (0, 1], got {v}")))
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.factors.is_empty() {
            return bad("factor schema is empty".into());
        }
        if self.num_bins < 2 {
            return bad(format!("num_bins must be at least 2, got {}", self.num_bins));
        }
        if !(self.pseudocount > 0.0 && self.pseudocount.is_finite()) {
            return bad(format!("pseudocount must be > 0, got {}", self.pseudocount));
        }
        if self.outcome_node.trim().is_empty() || self.factors.contains(&self.outcome_node) {
            return bad("outcome node must be a non-empty name distinct from the factors".into());
        }
        if self.retrieval.k == 0 {
            return bad("retrieval.k must be at least 1".into());
        }
        if self.retrieval.backend == RetrievalBackend::Remote && self.retrieval.embed_endpoint.is_none() {
            return bad("remote retrieval needs retrieval.embed_endpoint".into());
        }
        unit_interval("retrieval.tau_match", self.retrieval.tau_match)?;
        unit_interval("explain.tau_scp", self.explain.tau_scp)?;
        if !(0.0..=1.0).contains(&self.verifier.hr_threshold) {
            return bad(format!("verifier.hr_threshold must be in [0, 1], got {}", self.verifier.hr_threshold));
        }
        if self.explain.top_n == 0 {
            return bad("explain.top_n must be at least 1".into());
        }
        if !(1..=crate::counterfactual::MAX_EDITS_CAP).contains(&self.explain.counterfactual_max_edits) {
            return bad("explain.counterfactual_max_edits must be 1 or 2".into());
        }
        self.generator.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let cfg: PipelineConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|source| ConfigError::Io { path: path.into(), source })
    }

    /// SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(serde_json::to_string(&back).unwrap(), json);
        assert_eq!(back.fingerprint(), cfg.fingerprint());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: PipelineConfig =
            serde_json::from_str(r#"{"num_bins": 4, "verifier": {"hr_threshold": 0.3}}"#).unwrap();
        assert_eq!(cfg.num_bins, 4);
        assert_eq!(cfg.verifier.hr_threshold, 0.3);
        assert!(cfg.verifier.fallback_enabled);
        assert_eq!(cfg.generator.model, "gpt-4");
    }

    #[test]
    fn rejects_out_of_range() {
        let mut cfg = PipelineConfig::default();
        cfg.retrieval.tau_match = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.explain.counterfactual_max_edits = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.generator.mode = crate::agents::GeneratorMode::Remote;
        assert!(cfg.validate().is_err());
    }
}
