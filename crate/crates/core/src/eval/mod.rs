//! Dataset-level evaluation: SCP mapping, classification metrics, the
//! ablation ladder and report files.

mod ablation;
mod lexicon;
mod metrics;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use ablation::{
    aggregate, backbone_name, emit_grid, emit_report, grid_values, normalize_answer, read_eval_manifest, run_ablation,
    AblationConfig, Aggregates, CounterfactualSummary, EvalExample, EvalReport, EvalRow, ReportFiles, GRID_METRICS,
};
pub use lexicon::{map_text_to_scp, ScpEntry, ScpLexicon, DEFAULT_TAU_SCP};
pub use metrics::{classification_metrics, ClassificationMetrics, LabelScore};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction and gold lists differ in length ({pred} vs {gold})")]
    LengthMismatch { pred: usize, gold: usize },
    #[error("no examples to evaluate")]
    EmptyDataset,
    #[error("invalid lexicon: {0}")]
    InvalidLexicon(String),
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

impl EvalError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        EvalError::Io { path: path.to_path_buf(), source }
    }
}
