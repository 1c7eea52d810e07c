//! Directory-backed record store.
//!
//! Layout:
//! ```text
//! <root>/index.json
//! <root>/records/<record_id>/samples.bin   little-endian f64, lead-major
//! <root>/records/<record_id>/meta.json
//! ```
//! Writers must be serialized externally; readers may share a store freely.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{EcgRecord, SignalIoError};

const INDEX_FILE: &str = "index.json";
const SAMPLES_FILE: &str = "samples.bin";
const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    /// Directory relative to the store root.
    pub dir: String,
    pub patient_id: Option<String>,
    pub acquired_at: Option<i64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    record_id: String,
    patient_id: Option<String>,
    acquired_at: Option<i64>,
    sampling_rate_hz: f64,
    lead_names: Vec<String>,
    num_samples: usize,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct IndexFile {
    records: IndexMap<String, IndexEntry>,
}

#[derive(Debug)]
pub struct RecordStore {
    root: PathBuf,
    index: IndexMap<String, IndexEntry>,
}

impl RecordStore {
    /// Opens the store at `root`, creating an empty one if needed.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, SignalIoError> {
        let root = root.as_ref().to_path_buf();
        std::fs::create_dir_all(root.join("records")).map_err(|e| SignalIoError::io(&root, e))?;
        let index_path = root.join(INDEX_FILE);
        let index = if index_path.exists() {
            let text = std::fs::read_to_string(&index_path).map_err(|e| SignalIoError::io(&index_path, e))?;
            serde_json::from_str::<IndexFile>(&text)?.records
        } else {
            IndexMap::new()
        };
        Ok(RecordStore { root, index })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn contains(&self, record_id: &str) -> bool {
        self.index.contains_key(record_id)
    }

    pub fn entry(&self, record_id: &str) -> Option<&IndexEntry> {
        self.index.get(record_id)
    }

    /// Record ids in insertion order.
    pub fn record_ids(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }

    pub fn store_record(&mut self, rec: &EcgRecord) -> Result<String, SignalIoError> {
        rec.validate()?;
        if self.index.contains_key(&rec.record_id) {
            return Err(SignalIoError::DuplicateRecordId(rec.record_id.clone()));
        }
        let rel = format!("records/{}", rec.record_id);
        let dir = self.root.join(&rel);
        std::fs::create_dir_all(&dir).map_err(|e| SignalIoError::io(&dir, e))?;

        let mut bytes = Vec::with_capacity(rec.num_leads() * rec.num_samples() * 8);
        for lead in &rec.samples {
            for v in lead {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let samples_path = dir.join(SAMPLES_FILE);
        std::fs::write(&samples_path, bytes).map_err(|e| SignalIoError::io(&samples_path, e))?;

        let sidecar = Sidecar {
            record_id: rec.record_id.clone(),
            patient_id: rec.patient_id.clone(),
            acquired_at: rec.acquired_at,
            sampling_rate_hz: rec.sampling_rate_hz,
            lead_names: rec.lead_names.clone(),
            num_samples: rec.num_samples(),
        };
        let meta_path = dir.join(META_FILE);
        std::fs::write(&meta_path, serde_json::to_vec_pretty(&sidecar)?)
            .map_err(|e| SignalIoError::io(&meta_path, e))?;

        self.index.insert(
            rec.record_id.clone(),
            IndexEntry { dir: rel, patient_id: rec.patient_id.clone(), acquired_at: rec.acquired_at },
        );
        self.write_index()?;
        Ok(rec.record_id.clone())
    }

    fn write_index(&self) -> Result<(), SignalIoError> {
        let file = IndexFile { records: self.index.clone() };
        let tmp = self.root.join(format!("{INDEX_FILE}.tmp"));
        std::fs::write(&tmp, serde_json::to_vec_pretty(&file)?).map_err(|e| SignalIoError::io(&tmp, e))?;
        let dest = self.root.join(INDEX_FILE);
        std::fs::rename(&tmp, &dest).map_err(|e| SignalIoError::io(&dest, e))
    }

    pub fn load_record(&self, record_id: &str) -> Result<EcgRecord, SignalIoError> {
        let entry = self.index.get(record_id).ok_or_else(|| SignalIoError::NotFound(record_id.to_string()))?;
        let dir = self.root.join(&entry.dir);
        let meta_path = dir.join(META_FILE);
        let meta: Sidecar =
            serde_json::from_slice(&std::fs::read(&meta_path).map_err(|e| SignalIoError::io(&meta_path, e))?)?;
        let samples_path = dir.join(SAMPLES_FILE);
        let bytes = std::fs::read(&samples_path).map_err(|e| SignalIoError::io(&samples_path, e))?;
        let c = meta.lead_names.len();
        let t = meta.num_samples;
        if bytes.len() != c * t * 8 {
            return Err(SignalIoError::InvalidRecord(format!(
                "{}: sample file holds {} bytes, expected {}",
                record_id,
                bytes.len(),
                c * t * 8
            )));
        }
        let mut samples = Vec::with_capacity(c);
        for lead in bytes.chunks_exact(t * 8) {
            samples
                .push(lead.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk"))).collect());
        }
        let rec = EcgRecord {
            record_id: meta.record_id,
            patient_id: meta.patient_id,
            acquired_at: meta.acquired_at,
            sampling_rate_hz: meta.sampling_rate_hz,
            lead_names: meta.lead_names,
            samples,
        };
        rec.validate()?;
        Ok(rec)
    }

    /// Timestamped records of a patient, oldest first; ties break on record id.
    pub fn list_patient_history(&self, patient_id: &str) -> Vec<String> {
        let mut hits: Vec<(i64, &str)> = self
            .index
            .iter()
            .filter(|(_, e)| e.patient_id.as_deref() == Some(patient_id))
            .filter_map(|(id, e)| e.acquired_at.map(|t| (t, id.as_str())))
            .collect();
        hits.sort();
        hits.into_iter().map(|(_, id)| id.to_string()).collect()
    }
}
