//! Biomarker encoding: waveform -> named factor vector -> discrete evidence.

mod detect;
mod discretize;
mod extract;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal_io::EcgRecord;

pub use detect::{detect_peaks, detect_r_peaks};
pub use discretize::{default_bin_labels, discretize, fit_discretizer, DiscreteEvidence, DiscretizerModel};
pub use extract::{extract_biomarkers, measurement_lead};

pub const HEART_RATE: &str = "heart_rate_bpm";
pub const RR_RMSSD: &str = "rr_rmssd_ms";
pub const PR_INTERVAL: &str = "pr_interval_ms";
pub const QRS_DURATION: &str = "qrs_duration_ms";
pub const QT_INTERVAL: &str = "qt_interval_ms";
pub const QTC_BAZETT: &str = "qtc_bazett_ms";
pub const ST_DEVIATION: &str = "st_deviation_mv";
pub const T_AMPLITUDE: &str = "t_amplitude_mv";

/// The eight-factor clinical schema produced by [`WaveformEncoder`].
pub const DEFAULT_FACTORS: [&str; 8] =
    [HEART_RATE, RR_RMSSD, PR_INTERVAL, QRS_DURATION, QT_INTERVAL, QTC_BAZETT, ST_DEVIATION, T_AMPLITUDE];

pub fn default_schema() -> Vec<String> {
    DEFAULT_FACTORS.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Error)]
pub enum BiomarkerError {
    #[error("lead {0:?} not found")]
    LeadNotFound(String),
    #[error("fewer than two R peaks found on lead {lead:?} ({found} found)")]
    NoPeaks { lead: String, found: usize },
    #[error("could not encode record {record_id:?}: {reason}")]
    EncodeFailure { record_id: String, reason: String },
    #[error("factor {factor:?} has {available} usable values, need at least {required}")]
    InsufficientData { factor: String, available: usize, required: usize },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("number of bins must be at least 2, got {0}")]
    InvalidBins(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quality {
    Ok,
    LowConfidence,
    Missing,
}

/// Continuous factor values for one record.
///
/// `quality` covers the full factor schema in declaration order; `values`
/// holds an entry for every factor that is not `Missing`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiomarkerVector {
    pub record_id: String,
    pub values: IndexMap<String, f64>,
    pub quality: IndexMap<String, Quality>,
}

impl BiomarkerVector {
    pub fn all_missing(record_id: impl Into<String>, schema: &[String]) -> Self {
        BiomarkerVector {
            record_id: record_id.into(),
            values: IndexMap::new(),
            quality: schema.iter().map(|f| (f.clone(), Quality::Missing)).collect(),
        }
    }

    pub fn schema(&self) -> impl Iterator<Item = &str> {
        self.quality.keys().map(String::as_str)
    }

    pub fn set(&mut self, factor: &str, value: Option<f64>, quality: Quality) {
        match (value, quality) {
            (Some(v), q) if q != Quality::Missing && v.is_finite() => {
                self.values.insert(factor.to_string(), v);
                self.quality.insert(factor.to_string(), q);
            }
            _ => {
                self.values.shift_remove(factor);
                self.quality.insert(factor.to_string(), Quality::Missing);
            }
        }
    }

    /// Value of a factor whose quality is `Ok`.
    pub fn ok_value(&self, factor: &str) -> Option<f64> {
        match self.quality.get(factor) {
            Some(Quality::Ok) => self.values.get(factor).copied(),
            _ => None,
        }
    }

    pub fn same_schema(&self, other: &BiomarkerVector) -> bool {
        self.quality.len() == other.quality.len() && self.quality.keys().all(|k| other.quality.contains_key(k))
    }
}

/// Longitudinal change between two vectors of the same patient (or a
/// surrogate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiomarkerDelta {
    pub baseline_record_id: String,
    pub current_record_id: String,
    pub deltas: IndexMap<String, f64>,
}

/// `current - baseline` on factors that are `Ok` on both sides.
pub fn delta(baseline: &BiomarkerVector, current: &BiomarkerVector) -> Result<BiomarkerDelta, BiomarkerError> {
    if !baseline.same_schema(current) {
        return Err(BiomarkerError::SchemaMismatch(format!(
            "{} and {} use different factor sets",
            baseline.record_id, current.record_id
        )));
    }
    let deltas =
        current.schema().filter_map(|f| Some((f.to_string(), current.ok_value(f)? - baseline.ok_value(f)?))).collect();
    Ok(BiomarkerDelta {
        baseline_record_id: baseline.record_id.clone(),
        current_record_id: current.record_id.clone(),
        deltas,
    })
}

/// Maps a record to a biomarker vector.
///
/// The waveform extractor and precomputed feature tables both sit behind
/// this trait, so a learned encoder can replace either.
pub trait Encoder: Send + Sync {
    fn schema(&self) -> Vec<String>;
    fn encode(&self, rec: &EcgRecord) -> Result<BiomarkerVector, BiomarkerError>;
}

/// Deterministic clinical feature extractor over the default schema.
#[derive(Debug, Clone, Copy, Default)]
pub struct WaveformEncoder;

impl Encoder for WaveformEncoder {
    fn schema(&self) -> Vec<String> {
        default_schema()
    }

    fn encode(&self, rec: &EcgRecord) -> Result<BiomarkerVector, BiomarkerError> {
        extract_biomarkers(rec)
    }
}

/// Looks vectors up by record id from a precomputed feature table.
#[derive(Debug, Clone, Default)]
pub struct FeatureTable {
    schema: Vec<String>,
    vectors: IndexMap<String, BiomarkerVector>,
}

impl FeatureTable {
    pub fn new(vectors: Vec<BiomarkerVector>) -> Result<Self, BiomarkerError> {
        let schema: Vec<String> = vectors.first().map(|v| v.schema().map(str::to_string).collect()).unwrap_or_default();
        let mut map = IndexMap::new();
        for v in vectors {
            if v.quality.len() != schema.len() || !schema.iter().all(|f| v.quality.contains_key(f)) {
                return Err(BiomarkerError::SchemaMismatch(format!("{} does not match the table schema", v.record_id)));
            }
            map.insert(v.record_id.clone(), v);
        }
        Ok(FeatureTable { schema, vectors: map })
    }

    pub fn get(&self, record_id: &str) -> Option<&BiomarkerVector> {
        self.vectors.get(record_id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(String::as_str)
    }
}

impl Encoder for FeatureTable {
    fn schema(&self) -> Vec<String> {
        self.schema.clone()
    }

    fn encode(&self, rec: &EcgRecord) -> Result<BiomarkerVector, BiomarkerError> {
        self.vectors.get(&rec.record_id).cloned().ok_or_else(|| BiomarkerError::EncodeFailure {
            record_id: rec.record_id.clone(),
            reason: "no row in feature table".into(),
        })
    }
}
