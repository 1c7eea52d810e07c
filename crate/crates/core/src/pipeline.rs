//! Fitted artifacts and the stage-by-stage explain flow shared by the CLI,
//! the service and the evaluator.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    diagnosis_agent, history_agent, make_generator, respond, AgentError, AgentMessage, ExplanationPayload, GateConfig,
    Generator, HistoryContext,
};
use crate::biomarker::{
    discretize, fit_discretizer, BiomarkerError, BiomarkerVector, DiscreteEvidence, DiscretizerModel, Encoder,
    FeatureTable, WaveformEncoder,
};
use crate::causal_net::{
    fit_cpts, infer_posterior, learn_structure, rank_contributions, CausalError, CausalNetwork, EdgeConstraints,
    FactorContribution, LabeledEvidenceSet, LabeledRow, NodeSpec, Posterior,
};
use crate::config::{ConfigError, PipelineConfig, RetrievalBackend};
use crate::counterfactual::{find_counterfactual, whatif, CounterfactualResult};
use crate::eval::{EvalError, ScpLexicon};
use crate::grounding::{DescriptorMap, MatchReport};
use crate::knowledge::{
    build_index, enrich_query, load_corpus, retrieve, DenseIndex, FactDoc, KnowledgeError, KnowledgeIndex,
    RemoteEmbedder, RetrievalResult,
};
use crate::signal_io::{read_feature_csv, RecordStore, SignalIoError};
use crate::synthetic::SyntheticError;

pub const MODEL_FILE: &str = "model.json";
pub const INDEX_FILE: &str = "index.json";

const DEMO_CORPUS: &str = include_str!("../assets/demo_corpus.jsonl");
const DEMO_LEXICON: &str = include_str!("../assets/demo_lexicon.json");
const DEMO_DESCRIPTORS: &str = include_str!("../assets/demo_descriptors.json");

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Signal(#[from] SignalIoError),
    #[error(transparent)]
    Biomarker(#[from] BiomarkerError),
    #[error(transparent)]
    Causal(#[from] CausalError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synthetic(#[from] SyntheticError),
    #[error("missing artifact for stage {0}")]
    MissingArtifact(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse error category used for exit codes and HTTP statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    NotFound,
    ZeroProbability,
    Remote,
    Io,
    Internal,
}

impl ErrorKind {
    pub fn code(self) -> &'static str {
        match self {
            ErrorKind::Validation => "validation",
            ErrorKind::NotFound => "not_found",
            ErrorKind::ZeroProbability => "zero_probability_evidence",
            ErrorKind::Remote => "remote_unavailable",
            ErrorKind::Io => "io",
            ErrorKind::Internal => "internal",
        }
    }
}

fn causal_kind(e: &CausalError) -> ErrorKind {
    match e {
        CausalError::ZeroProbabilityEvidence => ErrorKind::ZeroProbability,
        CausalError::NotFitted(_) => ErrorKind::Internal,
        _ => ErrorKind::Validation,
    }
}

fn signal_kind(e: &SignalIoError) -> ErrorKind {
    match e {
        SignalIoError::NotFound(_) => ErrorKind::NotFound,
        SignalIoError::Io { .. } => ErrorKind::Io,
        _ => ErrorKind::Validation,
    }
}

impl PipelineError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            PipelineError::Signal(e) => signal_kind(e),
            PipelineError::Biomarker(_) => ErrorKind::Validation,
            PipelineError::Causal(e) => causal_kind(e),
            PipelineError::Knowledge(e) => match e {
                KnowledgeError::RemoteUnavailable(_) | KnowledgeError::Timeout => ErrorKind::Remote,
                KnowledgeError::Io { .. } => ErrorKind::Io,
                _ => ErrorKind::Validation,
            },
            PipelineError::Agent(e) => match e {
                AgentError::RemoteUnavailable(_) | AgentError::Timeout => ErrorKind::Remote,
                AgentError::InvalidConfig(_) => ErrorKind::Validation,
                AgentError::Causal(c) => causal_kind(c),
            },
            PipelineError::Config(e) => match e {
                ConfigError::Io { .. } => ErrorKind::Io,
                _ => ErrorKind::Validation,
            },
            PipelineError::Eval(e) => match e {
                EvalError::Io { .. } => ErrorKind::Io,
                _ => ErrorKind::Validation,
            },
            PipelineError::Synthetic(e) => match e {
                SyntheticError::Causal(c) => causal_kind(c),
                SyntheticError::Store(s) => signal_kind(s),
                SyntheticError::Io { .. } => ErrorKind::Io,
                _ => ErrorKind::Validation,
            },
            PipelineError::MissingArtifact(_) => ErrorKind::Validation,
            PipelineError::Io { .. } => ErrorKind::Io,
            PipelineError::Json(_) => ErrorKind::Validation,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io { path: path.to_path_buf(), source }
    }
}

/// Which stages of the explain flow run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stages {
    pub graph_enabled: bool,
    pub rag_enabled: bool,
    pub verifier_enabled: bool,
    pub counterfactual_enabled: bool,
}

impl Stages {
    pub const FULL: Stages =
        Stages { graph_enabled: true, rag_enabled: true, verifier_enabled: true, counterfactual_enabled: true };
    pub const LATENT_ONLY: Stages =
        Stages { graph_enabled: false, rag_enabled: false, verifier_enabled: false, counterfactual_enabled: false };
}

impl Default for Stages {
    fn default() -> Self {
        Stages::FULL
    }
}

/// Discretizer, learned network and training label frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub discretizer: DiscretizerModel,
    pub network: CausalNetwork,
    pub outcome_prior: IndexMap<String, f64>,
    pub config_fingerprint: String,
    pub training_size: usize,
}

impl FittedModel {
    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| PipelineError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let model: FittedModel = serde_json::from_str(&text)?;
        model.network.validate()?;
        Ok(model)
    }

    /// The outcome prior as a posterior with no evidence applied.
    pub fn prior_posterior(&self) -> Posterior {
        Posterior { variable: self.network.outcome.clone(), probs: self.outcome_prior.clone() }
    }

    /// Evidence restricted to the factors the network models.
    pub fn evidence(&self, v: &BiomarkerVector) -> Result<DiscreteEvidence, PipelineError> {
        let mut ev = discretize(&self.discretizer, v)?;
        ev.bins.retain(|f, _| self.network.node_index(f).is_some());
        ev.labels.retain(|f, _| self.network.node_index(f).is_some());
        Ok(ev)
    }
}

fn restrict_constraints(priors: &EdgeConstraints, keep: &[String]) -> EdgeConstraints {
    let has = |n: &String| keep.contains(n);
    EdgeConstraints {
        required: priors.required.iter().filter(|(a, b)| has(a) && has(b)).cloned().collect(),
        forbidden: priors.forbidden.iter().filter(|(a, b)| has(a) && has(b)).cloned().collect(),
        ordering: priors.ordering.iter().filter(|n| has(n)).cloned().collect(),
    }
}

/// Fits the discretizer on `vectors`, learns the structure with K2 and the
/// CPTs with Dirichlet smoothing. `labels[i]` is the outcome of `vectors[i]`.
pub fn fit_model(
    config: &PipelineConfig,
    vectors: &[BiomarkerVector],
    labels: &[String],
) -> Result<FittedModel, PipelineError> {
    config.validate()?;
    if vectors.len() != labels.len() {
        return Err(EvalError::LengthMismatch { pred: vectors.len(), gold: labels.len() }.into());
    }
    let discretizer = fit_discretizer(vectors, config.num_bins)?;

    let mut nodes = Vec::new();
    for f in &config.factors {
        let Some(states) = discretizer.labels_for(f) else {
            return Err(BiomarkerError::SchemaMismatch(format!("factor {f:?} is not produced by the encoder")).into());
        };
        if discretizer.is_degenerate(f) {
            tracing::warn!(factor = %f, "degenerate factor left out of the network");
            continue;
        }
        nodes.push(NodeSpec { name: f.clone(), states });
    }
    let outcome_states: Vec<String> = if config.outcome_states.is_empty() {
        let mut s: Vec<String> = labels.to_vec();
        s.sort();
        s.dedup();
        s
    } else {
        config.outcome_states.clone()
    };
    nodes.push(NodeSpec { name: config.outcome_node.clone(), states: outcome_states.clone() });

    let mut rows = Vec::with_capacity(vectors.len());
    for (v, label) in vectors.iter().zip(labels) {
        let mut evidence = discretize(&discretizer, v)?;
        evidence.bins.retain(|f, _| nodes.iter().any(|n| &n.name == f));
        evidence.labels.retain(|f, _| nodes.iter().any(|n| &n.name == f));
        rows.push(LabeledRow { evidence, outcome: label.clone() });
    }
    let data = LabeledEvidenceSet::new(nodes, config.outcome_node.clone(), rows)?;
    let names: Vec<String> = data.nodes.iter().map(|n| n.name.clone()).collect();
    let priors = restrict_constraints(&config.priors, &names);
    let structure = learn_structure(&data, &priors, config.max_parents)?;
    let network = fit_cpts(&structure, &data, config.pseudocount)?;

    let n = labels.len() as f64;
    let outcome_prior =
        outcome_states.iter().map(|s| (s.clone(), labels.iter().filter(|l| *l == s).count() as f64 / n)).collect();
    Ok(FittedModel {
        discretizer,
        network,
        outcome_prior,
        config_fingerprint: config.fingerprint(),
        training_size: labels.len(),
    })
}

pub fn demo_corpus() -> Vec<FactDoc> {
    DEMO_CORPUS
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("bundled corpus parses"))
        .collect()
}

pub fn demo_lexicon() -> ScpLexicon {
    serde_json::from_str(DEMO_LEXICON).expect("bundled lexicon parses")
}

pub fn demo_descriptors() -> DescriptorMap {
    serde_json::from_str(DEMO_DESCRIPTORS).expect("bundled descriptors parse")
}

pub fn load_descriptors(path: &Path) -> Result<DescriptorMap, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Where biomarker vectors come from: waveform extraction over the store or
/// a precomputed feature table.
#[derive(Debug)]
pub struct VectorSource {
    table: Option<FeatureTable>,
    cache: Mutex<HashMap<String, BiomarkerVector>>,
}

impl VectorSource {
    pub fn waveform() -> Self {
        VectorSource { table: None, cache: Mutex::new(HashMap::new()) }
    }

    pub fn table(table: FeatureTable) -> Self {
        VectorSource { table: Some(table), cache: Mutex::new(HashMap::new()) }
    }

    pub fn from_config(config: &PipelineConfig) -> Result<Self, PipelineError> {
        match &config.paths.features {
            Some(p) => Ok(VectorSource::table(FeatureTable::new(read_feature_csv(p)?)?)),
            None => Ok(VectorSource::waveform()),
        }
    }

    pub fn schema(&self) -> Vec<String> {
        match &self.table {
            Some(t) => t.schema(),
            None => WaveformEncoder.schema(),
        }
    }

    /// The vector for `record_id`, memoized.
    pub fn vector(&self, store: &RecordStore, record_id: &str) -> Result<BiomarkerVector, PipelineError> {
        if let Some(v) = self.cache.lock().expect("cache lock").get(record_id) {
            return Ok(v.clone());
        }
        let v = match &self.table {
            Some(t) => t.get(record_id).cloned().ok_or_else(|| SignalIoError::NotFound(record_id.to_string()))?,
            None => WaveformEncoder.encode(&store.load_record(record_id)?)?,
        };
        self.cache.lock().expect("cache lock").insert(record_id.to_string(), v.clone());
        Ok(v)
    }

    /// Every vector available for history lookups, in store order (table
    /// order for feature tables). Records that fail to encode are skipped.
    pub fn pool(&self, store: &RecordStore) -> IndexMap<String, BiomarkerVector> {
        let ids: Vec<String> = match &self.table {
            Some(t) => t.ids().map(str::to_string).collect(),
            None => store.record_ids().map(str::to_string).collect(),
        };
        ids.into_iter()
            .filter_map(|id| match self.vector(store, &id) {
                Ok(v) => Some((id, v)),
                Err(e) => {
                    tracing::debug!(record = %id, error = %e, "skipped in history pool");
                    None
                }
            })
            .collect()
    }
}

/// A full explanation with the intermediate state kept for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub payload: ExplanationPayload,
    pub message: AgentMessage,
    pub prompt: String,
    pub prompt_rag_only: Option<String>,
    pub initial_hr: f64,
    pub match_report: MatchReport,
    pub counterfactual_target: Option<String>,
    pub stages: Stages,
}

enum Retriever {
    Tfidf,
    Dense(DenseIndex, RemoteEmbedder),
}

/// Everything needed to answer queries about stored records.
pub struct Pipeline {
    pub config: PipelineConfig,
    pub model: FittedModel,
    pub index: Option<KnowledgeIndex>,
    pub lexicon: ScpLexicon,
    pub descriptors: DescriptorMap,
    pub vectors: VectorSource,
    generator: Box<dyn Generator>,
    retriever: Retriever,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("model_fingerprint", &self.model.config_fingerprint)
            .field("index_docs", &self.index.as_ref().map(KnowledgeIndex::len))
            .finish_non_exhaustive()
    }
}

impl Pipeline {
    pub fn new(
        config: PipelineConfig,
        model: FittedModel,
        index: Option<KnowledgeIndex>,
        lexicon: ScpLexicon,
        descriptors: DescriptorMap,
        vectors: VectorSource,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        lexicon.validate()?;
        let generator = make_generator(&config.generator)?;
        let retriever = match (config.retrieval.backend, &index) {
            (RetrievalBackend::Remote, Some(idx)) => {
                let endpoint = config.retrieval.embed_endpoint.clone().unwrap_or_default();
                let embedder = RemoteEmbedder::new(endpoint, Duration::from_secs_f64(config.generator.timeout_s));
                let docs: Vec<FactDoc> = idx.docs.values().cloned().collect();
                Retriever::Dense(DenseIndex::build(&docs, &embedder)?, embedder)
            }
            _ => Retriever::Tfidf,
        };
        Ok(Pipeline { config, model, index, lexicon, descriptors, vectors, generator, retriever })
    }

    /// Loads artifacts named by the config. The model is required; the
    /// index comes from `index.json` or is built from the corpus; lexicon
    /// and descriptors fall back to the bundled demo files.
    pub fn load(config: PipelineConfig) -> Result<Self, PipelineError> {
        let dir = config.paths.artifacts.clone().ok_or_else(|| PipelineError::MissingArtifact("model".into()))?;
        let model_path = dir.join(MODEL_FILE);
        if !model_path.exists() {
            return Err(PipelineError::MissingArtifact(format!("model ({})", model_path.display())));
        }
        let model = FittedModel::load(&model_path)?;
        let index_path = dir.join(INDEX_FILE);
        let index = if index_path.exists() {
            Some(KnowledgeIndex::load(&index_path)?)
        } else if let Some(corpus) = &config.paths.corpus {
            Some(build_index(&load_corpus(corpus)?)?)
        } else {
            None
        };
        let lexicon = match &config.paths.lexicon {
            Some(p) => ScpLexicon::load(p)?,
            None => demo_lexicon(),
        };
        let descriptors = match &config.paths.descriptors {
            Some(p) => load_descriptors(p)?,
            None => demo_descriptors(),
        };
        let vectors = VectorSource::from_config(&config)?;
        Pipeline::new(config, model, index, lexicon, descriptors, vectors)
    }

    pub fn with_generator(mut self, generator: Box<dyn Generator>) -> Self {
        self.generator = generator;
        self
    }

    pub fn network(&self) -> &CausalNetwork {
        &self.model.network
    }

    pub fn evidence(&self, store: &RecordStore, record_id: &str) -> Result<DiscreteEvidence, PipelineError> {
        self.model.evidence(&self.vectors.vector(store, record_id)?)
    }

    pub fn posterior(&self, evidence: &DiscreteEvidence) -> Result<Posterior, PipelineError> {
        Ok(infer_posterior(&self.model.network, evidence, &self.model.network.outcome)?)
    }

    pub fn drivers(&self, evidence: &DiscreteEvidence) -> Result<FactorContribution, PipelineError> {
        Ok(rank_contributions(&self.model.network, evidence, &self.model.network.outcome)?)
    }

    pub fn whatif(
        &self,
        evidence: &DiscreteEvidence,
        overrides: &IndexMap<String, BinRef>,
    ) -> Result<Posterior, PipelineError> {
        let resolved = self.resolve_overrides(overrides)?;
        Ok(whatif(&self.model.network, evidence, &resolved)?)
    }

    pub fn counterfactual(
        &self,
        evidence: &DiscreteEvidence,
        target: &str,
        max_edits: Option<usize>,
    ) -> Result<CounterfactualResult, PipelineError> {
        let k = max_edits.unwrap_or(self.config.explain.counterfactual_max_edits);
        Ok(find_counterfactual(&self.model.network, evidence, target, k)?)
    }

    /// Maps bin labels to 1-based bin numbers.
    pub fn resolve_overrides(
        &self,
        overrides: &IndexMap<String, BinRef>,
    ) -> Result<IndexMap<String, usize>, PipelineError> {
        overrides
            .iter()
            .map(|(f, b)| {
                let bin = match b {
                    BinRef::Bin(i) => *i,
                    BinRef::Label(l) => self.model.network.state_index(f, l)? + 1,
                };
                Ok((f.clone(), bin))
            })
            .collect()
    }

    pub fn retrieve(&self, enriched_query: &str) -> Result<RetrievalResult, PipelineError> {
        let index = self.index.as_ref().ok_or_else(|| PipelineError::MissingArtifact("rag".into()))?;
        let k = self.config.retrieval.k;
        Ok(match &self.retriever {
            Retriever::Tfidf => retrieve(index, enriched_query, k),
            Retriever::Dense(d, e) => d.retrieve(e, enriched_query, k)?,
        })
    }

    /// Runs the enabled stages for one record's evidence.
    ///
    /// Without the graph the prediction is the training prior and no
    /// drivers are reported. Without retrieval the fact list is empty.
    /// Without the verifier the fallback gate stays closed.
    pub fn explain(
        &self,
        evidence: &DiscreteEvidence,
        history: Option<HistoryContext>,
        query: &str,
        stages: Stages,
        fallback_enabled: Option<bool>,
    ) -> Result<Explanation, PipelineError> {
        if stages.counterfactual_enabled && !stages.graph_enabled {
            return Err(PipelineError::MissingArtifact("graph (needed by counterfactual)".into()));
        }
        let (prediction, drivers, counterfactual, target) = if stages.graph_enabled {
            let cf = stages.counterfactual_enabled.then_some(self.config.explain.counterfactual_max_edits);
            let d = diagnosis_agent(&self.model.network, evidence, query, &self.lexicon, cf)?;
            (d.posterior, d.drivers, d.counterfactual, d.target)
        } else {
            (self.model.prior_posterior(), FactorContribution::default(), None, None)
        };
        let retrieved = if stages.rag_enabled {
            let q = enrich_query(query, &drivers, evidence, prediction.argmax(), self.config.retrieval.top_m);
            self.retrieve(&q)?
        } else {
            RetrievalResult { enriched_query: query.to_string(), ..Default::default() }
        };
        let message = AgentMessage {
            query: query.to_string(),
            history,
            evidence: evidence.clone(),
            prediction: Some(prediction),
            retrieved,
            drivers,
            counterfactual,
        };
        let gate = GateConfig {
            fallback_enabled: stages.verifier_enabled
                && fallback_enabled.unwrap_or(self.config.verifier.fallback_enabled),
            hr_threshold: self.config.verifier.hr_threshold,
            tau_match: self.config.retrieval.tau_match,
            prompt_drivers: self.config.explain.top_n,
        };
        let r = respond(&message, self.generator.as_ref(), &gate)?;
        Ok(Explanation {
            payload: r.payload,
            message,
            prompt: r.prompt,
            prompt_rag_only: r.prompt_rag_only,
            initial_hr: r.initial_hr,
            match_report: r.report,
            counterfactual_target: target,
            stages,
        })
    }

    /// [`Pipeline::explain`] for a stored record, with history drawn from
    /// `pool`.
    pub fn explain_record(
        &self,
        store: &RecordStore,
        pool: &IndexMap<String, BiomarkerVector>,
        record_id: &str,
        query: &str,
        stages: Stages,
        fallback_enabled: Option<bool>,
    ) -> Result<Explanation, PipelineError> {
        let evidence = self.evidence(store, record_id)?;
        let history = if pool.contains_key(record_id) {
            history_agent(store, pool, record_id)
        } else {
            let mut p = pool.clone();
            p.insert(record_id.to_string(), self.vectors.vector(store, record_id)?);
            history_agent(store, &p, record_id)
        };
        self.explain(&evidence, history, query, stages, fallback_enabled)
    }
}

/// A bin given by 1-based number or by label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BinRef {
    Bin(usize),
    Label(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate_cases, SyntheticSpec};

    fn fixture(n: usize) -> (PipelineConfig, Vec<BiomarkerVector>, Vec<String>) {
        let spec = SyntheticSpec::default();
        let cases = generate_cases(&spec, n, 7).unwrap();
        let vectors = cases.iter().map(|c| c.truth.clone()).collect();
        let labels = cases.iter().map(|c| c.outcome.clone()).collect();
        (PipelineConfig::default(), vectors, labels)
    }

    fn pipeline(n: usize) -> (Pipeline, Vec<BiomarkerVector>) {
        let (cfg, vectors, labels) = fixture(n);
        let model = fit_model(&cfg, &vectors, &labels).unwrap();
        let table = FeatureTable::new(vectors.clone()).unwrap();
        let index = build_index(&demo_corpus()).unwrap();
        let p = Pipeline::new(cfg, model, Some(index), demo_lexicon(), demo_descriptors(), VectorSource::table(table))
            .unwrap();
        (p, vectors)
    }

    #[test]
    fn prior_is_label_frequency() {
        let (cfg, vectors, labels) = fixture(60);
        let m = fit_model(&cfg, &vectors, &labels).unwrap();
        let total: f64 = m.outcome_prior.values().sum();
        assert!((total - 1.0).abs() < 1e-12);
        for (s, p) in &m.outcome_prior {
            let c = labels.iter().filter(|l| *l == s).count();
            assert_eq!(*p, c as f64 / 60.0);
        }
        assert_eq!(m.network.outcome_node().states, {
            let mut s = labels.clone();
            s.sort();
            s.dedup();
            s
        });
    }

    #[test]
    fn model_round_trip() {
        let (cfg, vectors, labels) = fixture(40);
        let m = fit_model(&cfg, &vectors, &labels).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(MODEL_FILE);
        m.save(&path).unwrap();
        assert_eq!(FittedModel::load(&path).unwrap(), m);
    }

    #[test]
    fn latent_only_uses_prior_and_no_facts() {
        let (p, vectors) = pipeline(80);
        let ev = p.model.evidence(&vectors[0]).unwrap();
        let e = p.explain(&ev, None, "why", Stages::LATENT_ONLY, None).unwrap();
        assert_eq!(e.message.prediction.as_ref().unwrap(), &p.model.prior_posterior());
        assert!(e.message.drivers.ranked.is_empty());
        assert!(e.message.retrieved.hits.is_empty());
        assert!(!e.payload.used_fallback);
    }

    #[test]
    fn full_stages_name_drivers_and_quote_facts() {
        let (p, vectors) = pipeline(120);
        let ev = p.model.evidence(&vectors[3]).unwrap();
        let e = p.explain(&ev, None, crate::synthetic::DEFAULT_QUERY, Stages::FULL, None).unwrap();
        assert!(!e.message.retrieved.hits.is_empty());
        assert_eq!(e.payload.hallucination_score, 0.0);
        assert!(e.message.counterfactual.is_some());
        for c in e.message.drivers.top(3) {
            assert!(e.payload.explanation.contains(&c.factor));
        }
    }

    #[test]
    fn counterfactual_without_graph_is_rejected() {
        let (p, vectors) = pipeline(40);
        let ev = p.model.evidence(&vectors[0]).unwrap();
        let stages = Stages { counterfactual_enabled: true, ..Stages::LATENT_ONLY };
        assert!(matches!(p.explain(&ev, None, "q", stages, None), Err(PipelineError::MissingArtifact(_))));
    }

    #[test]
    fn overrides_accept_labels() {
        let (p, vectors) = pipeline(60);
        let ev = p.model.evidence(&vectors[0]).unwrap();
        let f = p.network().factor_names().next().unwrap().to_string();
        let by_label: IndexMap<String, BinRef> = [(f.clone(), BinRef::Label("High".into()))].into_iter().collect();
        let by_bin: IndexMap<String, BinRef> = [(f, BinRef::Bin(3))].into_iter().collect();
        assert_eq!(p.whatif(&ev, &by_label).unwrap(), p.whatif(&ev, &by_bin).unwrap());
    }

    #[test]
    fn bundled_assets_parse() {
        assert!(demo_corpus().len() >= 20);
        assert!(demo_lexicon().entries.contains_key("NORM"));
        assert_eq!(demo_descriptors().len(), 8);
    }
}
