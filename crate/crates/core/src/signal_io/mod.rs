//! ECG record ingestion and persistence.
//!
//! Records are held in memory as lead-major matrices of millivolt samples.
//! Three ingest paths exist: plain CSV (one column per lead), WFDB format-16
//! header/signal pairs, and precomputed feature tables that bypass the
//! waveform encoder entirely.

mod csv_input;
mod store;
mod wfdb;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csv_input::{read_csv_record, read_csv_record_scaled, read_feature_csv};
pub use store::{IndexEntry, RecordStore};
pub use wfdb::read_wfdb16_record;

/// Lowest accepted sampling rate in Hz.
pub const MIN_RATE_HZ: f64 = 50.0;
/// Highest accepted sampling rate in Hz.
pub const MAX_RATE_HZ: f64 = 2000.0;
/// Minimum signal length in seconds.
pub const MIN_DURATION_S: f64 = 2.0;

#[derive(Debug, Error)]
pub enum SignalIoError {
    #[error("malformed CSV at row {row}: {reason}")]
    MalformedCsv { row: usize, reason: String },
    #[error("record too short: {samples} samples, need at least {required}")]
    TooShort { samples: usize, required: usize },
    #[error("sampling rate {0} Hz outside [{MIN_RATE_HZ}, {MAX_RATE_HZ}]")]
    BadRate(f64),
    #[error("unsupported WFDB storage format {0} (only format 16 is read)")]
    UnsupportedFormat(String),
    #[error("WFDB header mismatch: {0}")]
    HeaderMismatch(String),
    #[error("duplicate record id {0:?}")]
    DuplicateRecordId(String),
    #[error("record {0:?} not found")]
    NotFound(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl SignalIoError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        SignalIoError::Io { path: path.as_ref().display().to_string(), source }
    }
}

/// A multi-lead ECG segment.
///
/// `samples[c][t]` is lead `c` at sample `t`, in millivolts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcgRecord {
    pub record_id: String,
    pub patient_id: Option<String>,
    /// Seconds since the Unix epoch.
    pub acquired_at: Option<i64>,
    pub sampling_rate_hz: f64,
    pub lead_names: Vec<String>,
    pub samples: Vec<Vec<f64>>,
}

impl EcgRecord {
    /// Builds a record and checks every structural invariant.
    pub fn new(
        record_id: impl Into<String>,
        sampling_rate_hz: f64,
        lead_names: Vec<String>,
        samples: Vec<Vec<f64>>,
    ) -> Result<Self, SignalIoError> {
        let rec = EcgRecord {
            record_id: record_id.into(),
            patient_id: None,
            acquired_at: None,
            sampling_rate_hz,
            lead_names,
            samples,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn with_patient(mut self, patient_id: impl Into<String>, acquired_at: Option<i64>) -> Self {
        self.patient_id = Some(patient_id.into());
        self.acquired_at = acquired_at;
        self
    }

    pub fn validate(&self) -> Result<(), SignalIoError> {
        if self.record_id.is_empty()
            || self.record_id.chars().any(|c| c == '/' || c == '\\' || c.is_control())
            || self.record_id == "."
            || self.record_id == ".."
        {
            return Err(SignalIoError::InvalidRecord(format!(
                "record id {:?} is empty or not path-safe",
                self.record_id
            )));
        }
        if !(MIN_RATE_HZ..=MAX_RATE_HZ).contains(&self.sampling_rate_hz) {
            return Err(SignalIoError::BadRate(self.sampling_rate_hz));
        }
        if self.samples.is_empty() {
            return Err(SignalIoError::InvalidRecord("record has no leads".into()));
        }
        if self.lead_names.len() != self.samples.len() {
            return Err(SignalIoError::InvalidRecord(format!(
                "{} lead names for {} leads",
                self.lead_names.len(),
                self.samples.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for name in &self.lead_names {
            if !seen.insert(name.as_str()) {
                return Err(SignalIoError::InvalidRecord(format!("duplicate lead name {name:?}")));
            }
        }
        let t = self.samples[0].len();
        if self.samples.iter().any(|lead| lead.len() != t) {
            return Err(SignalIoError::InvalidRecord("leads differ in length".into()));
        }
        let required = min_samples(self.sampling_rate_hz);
        if t < required {
            return Err(SignalIoError::TooShort { samples: t, required });
        }
        for (c, lead) in self.samples.iter().enumerate() {
            if let Some(i) = lead.iter().position(|v| !v.is_finite()) {
                return Err(SignalIoError::InvalidRecord(format!(
                    "non-finite sample in lead {} at index {i}",
                    self.lead_names[c]
                )));
            }
        }
        Ok(())
    }

    pub fn num_leads(&self) -> usize {
        self.samples.len()
    }

    pub fn num_samples(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn lead(&self, name: &str) -> Option<&[f64]> {
        self.lead_names.iter().position(|n| n == name).map(|i| self.samples[i].as_slice())
    }
}

pub(crate) fn min_samples(rate: f64) -> usize {
    (MIN_DURATION_S * rate).ceil() as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(c: usize, t: usize) -> Vec<Vec<f64>> {
        vec![vec![0.0; t]; c]
    }

    #[test]
    fn accepts_minimal_record() {
        let rec = EcgRecord::new("a", 500.0, vec!["I".into()], flat(1, 1000)).unwrap();
        assert_eq!(rec.num_samples(), 1000);
    }

    #[test]
    fn rejects_bad_rate_and_short_signals() {
        assert!(matches!(EcgRecord::new("a", 20.0, vec!["I".into()], flat(1, 1000)), Err(SignalIoError::BadRate(_))));
        assert!(matches!(
            EcgRecord::new("a", 500.0, vec!["I".into()], flat(1, 999)),
            Err(SignalIoError::TooShort { required: 1000, .. })
        ));
    }

    #[test]
    fn rejects_duplicate_leads_and_nan() {
        let err = EcgRecord::new("a", 500.0, vec!["I".into(), "I".into()], flat(2, 1000));
        assert!(matches!(err, Err(SignalIoError::InvalidRecord(_))));
        let mut s = flat(1, 1000);
        s[0][10] = f64::NAN;
        assert!(EcgRecord::new("a", 500.0, vec!["I".into()], s).is_err());
    }

    #[test]
    fn rejects_path_like_ids() {
        assert!(EcgRecord::new("../x", 500.0, vec!["I".into()], flat(1, 1000)).is_err());
    }
}
