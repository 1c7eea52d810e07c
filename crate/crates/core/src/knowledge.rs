//! Fact corpus, tf-idf index and causal-conditioned retrieval.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::time::Duration;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::biomarker::DiscreteEvidence;
use crate::causal_net::FactorContribution;
use crate::text::tokenize;

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_TOP_M: usize = 3;

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("duplicate fact id {0:?}")]
    DuplicateFactId(String),
    #[error("fact {0:?} has empty text")]
    EmptyFactText(String),
    #[error("{path}:{line}: {reason}")]
    BadCorpusLine { path: PathBuf, line: usize, reason: String },
    #[error("embedding endpoint unavailable: {0}")]
    RemoteUnavailable(String),
    #[error("embedding request timed out")]
    Timeout,
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactDoc {
    pub fact_id: String,
    pub text: String,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default)]
    pub source: String,
}

/// Reads a JSON Lines corpus; blank lines are skipped.
pub fn load_corpus(path: &Path) -> Result<Vec<FactDoc>, KnowledgeError> {
    let io = |source| KnowledgeError::Io { path: path.to_path_buf(), source };
    let reader = BufReader::new(fs::File::open(path).map_err(io)?);
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: FactDoc = serde_json::from_str(&line).map_err(|e| KnowledgeError::BadCorpusLine {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        docs.push(doc);
    }
    check_corpus(&docs)?;
    Ok(docs)
}

pub fn write_corpus(path: &Path, docs: &[FactDoc]) -> Result<(), KnowledgeError> {
    let mut out = String::new();
    for d in docs {
        out.push_str(&serde_json::to_string(d)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| KnowledgeError::Io { path: path.to_path_buf(), source })
}

fn check_corpus(docs: &[FactDoc]) -> Result<(), KnowledgeError> {
    if docs.is_empty() {
        return Err(KnowledgeError::EmptyCorpus);
    }
    let mut seen = HashSet::new();
    for d in docs {
        if d.text.trim().is_empty() {
            return Err(KnowledgeError::EmptyFactText(d.fact_id.clone()));
        }
        if !seen.insert(d.fact_id.as_str()) {
            return Err(KnowledgeError::DuplicateFactId(d.fact_id.clone()));
        }
    }
    Ok(())
}

/// Sparse vector as `(term index, weight)` pairs sorted by index.
pub type SparseVec = Vec<(usize, f64)>;

pub fn sparse_dot(a: &SparseVec, b: &SparseVec) -> f64 {
    let (mut i, mut j, mut s) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                s += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeIndex {
    pub vocabulary: IndexMap<String, usize>,
    pub idf: Vec<f64>,
    pub doc_vectors: IndexMap<String, SparseVec>,
    pub docs: IndexMap<String, FactDoc>,
}

pub fn build_index(docs: &[FactDoc]) -> Result<KnowledgeIndex, KnowledgeError> {
    check_corpus(docs)?;
    let tokenized: Vec<Vec<String>> = docs.iter().map(|d| tokenize(&d.text)).collect();
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for toks in &tokenized {
        let uniq: HashSet<&str> = toks.iter().map(String::as_str).collect();
        for t in uniq {
            *df.entry(t).or_default() += 1;
        }
    }
    let n = docs.len() as f64;
    let vocabulary: IndexMap<String, usize> = df.keys().enumerate().map(|(i, t)| (t.to_string(), i)).collect();
    let idf: Vec<f64> = df.values().map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0).collect();

    let mut index = KnowledgeIndex {
        vocabulary,
        idf,
        doc_vectors: IndexMap::new(),
        docs: docs.iter().map(|d| (d.fact_id.clone(), d.clone())).collect(),
    };
    for (d, toks) in docs.iter().zip(&tokenized) {
        let v = index.vectorize_tokens(toks);
        if v.is_empty() {
            tracing::warn!(fact_id = %d.fact_id, "fact has no indexable terms; excluded");
            continue;
        }
        index.doc_vectors.insert(d.fact_id.clone(), v);
    }
    Ok(index)
}

impl KnowledgeIndex {
    /// Unit tf-idf vector over known terms; empty when no term is known.
    pub fn vectorize(&self, text: &str) -> SparseVec {
        self.vectorize_tokens(&tokenize(text))
    }

    fn vectorize_tokens(&self, toks: &[String]) -> SparseVec {
        let mut tf: BTreeMap<usize, f64> = BTreeMap::new();
        for t in toks {
            if let Some(&i) = self.vocabulary.get(t) {
                *tf.entry(i).or_default() += 1.0;
            }
        }
        let mut v: SparseVec = tf.into_iter().map(|(i, c)| (i, c * self.idf[i])).collect();
        let norm = v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Vec::new();
        }
        for (_, w) in &mut v {
            *w /= norm;
        }
        v
    }

    /// Cosine similarity of two texts in this index's space; 0 when either
    /// has no known terms.
    pub fn cosine(&self, a: &str, b: &str) -> f64 {
        sparse_dot(&self.vectorize(a), &self.vectorize(b))
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<(), KnowledgeError> {
        let json = serde_json::to_vec(self)?;
        fs::write(path, json).map_err(|source| KnowledgeError::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self, KnowledgeError> {
        let bytes = fs::read(path).map_err(|source| KnowledgeError::Io { path: path.to_path_buf(), source })?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedFact {
    pub doc: FactDoc,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub hits: Vec<RetrievedFact>,
    pub enriched_query: String,
    /// No query term is known to the index.
    pub empty_query: bool,
}

impl RetrievalResult {
    pub fn facts(&self) -> Vec<FactDoc> {
        self.hits.iter().map(|h| h.doc.clone()).collect()
    }
}

/// `q`, then `factor label` for the top `top_m` drivers that appear in the
/// evidence, then the predicted state. With `top_m == 0` the query is
/// returned unchanged.
pub fn enrich_query(
    q: &str,
    drivers: &FactorContribution,
    evidence: &DiscreteEvidence,
    prediction: &str,
    top_m: usize,
) -> String {
    if top_m == 0 {
        return q.to_string();
    }
    let mut parts = vec![q.to_string()];
    parts.extend(
        drivers
            .ranked
            .iter()
            .filter_map(|c| evidence.labels.get(&c.factor).map(|l| format!("{} {l}", c.factor)))
            .take(top_m),
    );
    if !prediction.is_empty() {
        parts.push(prediction.to_string());
    }
    parts.join(" ")
}

/// Top-`k` facts by cosine similarity; ties by fact id. Facts with zero
/// similarity are not returned.
pub fn retrieve(index: &KnowledgeIndex, enriched_query: &str, k: usize) -> RetrievalResult {
    let qv = index.vectorize(enriched_query);
    if qv.is_empty() {
        return RetrievalResult { hits: Vec::new(), enriched_query: enriched_query.to_string(), empty_query: true };
    }
    let mut scored: Vec<(&String, f64)> =
        index.doc_vectors.iter().map(|(id, v)| (id, sparse_dot(&qv, v))).filter(|&(_, s)| s > 0.0).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    scored.truncate(k);
    RetrievalResult {
        hits: scored.into_iter().map(|(id, score)| RetrievedFact { doc: index.docs[id].clone(), score }).collect(),
        enriched_query: enriched_query.to_string(),
        empty_query: false,
    }
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// HTTP embedding endpoint: `{texts: [...]}` -> `{vectors: [[...]]}`.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    pub endpoint: String,
    pub timeout: Duration,
}

impl RemoteEmbedder {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        RemoteEmbedder { endpoint: endpoint.into(), timeout }
    }

    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, KnowledgeError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| KnowledgeError::RemoteUnavailable(e.to_string()))?;
        let resp = client.post(&self.endpoint).json(&EmbedRequest { texts }).send().map_err(|e| {
            if e.is_timeout() {
                KnowledgeError::Timeout
            } else {
                KnowledgeError::RemoteUnavailable(e.to_string())
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(KnowledgeError::RemoteUnavailable(format!(
                "HTTP {status}: {}",
                body.chars().take(200).collect::<String>()
            )));
        }
        let parsed: EmbedResponse =
            resp.json().map_err(|e| KnowledgeError::RemoteUnavailable(format!("bad response: {e}")))?;
        if parsed.vectors.len() != texts.len() {
            return Err(KnowledgeError::RemoteUnavailable(format!(
                "expected {} vectors, got {}",
                texts.len(),
                parsed.vectors.len()
            )));
        }
        Ok(parsed.vectors)
    }
}

/// Dense alternative to the tf-idf index, backed by a remote embedder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseIndex {
    pub docs: Vec<FactDoc>,
    pub vectors: Vec<Vec<f64>>,
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

impl DenseIndex {
    pub fn build(docs: &[FactDoc], embedder: &RemoteEmbedder) -> Result<Self, KnowledgeError> {
        check_corpus(docs)?;
        let texts: Vec<String> = docs.iter().map(|d| d.text.clone()).collect();
        let vectors = embedder.embed(&texts)?.into_iter().map(unit).collect();
        Ok(DenseIndex { docs: docs.to_vec(), vectors })
    }

    pub fn retrieve(
        &self,
        embedder: &RemoteEmbedder,
        enriched_query: &str,
        k: usize,
    ) -> Result<RetrievalResult, KnowledgeError> {
        let q = unit(embedder.embed(&[enriched_query.to_string()])?.remove(0));
        let empty = q.iter().all(|&x| x == 0.0);
        let mut scored: Vec<(usize, f64)> =
            self.vectors.iter().enumerate().map(|(i, v)| (i, v.iter().zip(&q).map(|(a, b)| a * b).sum())).collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| self.docs[a.0].fact_id.cmp(&self.docs[b.0].fact_id)));
        scored.truncate(if empty { 0 } else { k });
        Ok(RetrievalResult {
            hits: scored.into_iter().map(|(i, score)| RetrievedFact { doc: self.docs[i].clone(), score }).collect(),
            enriched_query: enriched_query.to_string(),
            empty_query: empty,
        })
    }
}
