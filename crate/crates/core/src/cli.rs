//! Command-line entry point. Every subcommand prints JSON to stdout or to
//! `--out`. Exit codes: 0 success, 1 validation or usage, 2 I/O, 3 remote.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use indexmap::IndexMap;
use serde::Serialize;
use serde_json::json;

use crate::config::PipelineConfig;
use crate::eval::{
    emit_grid, emit_report, grid_values, read_eval_manifest, run_ablation, AblationConfig, EvalExample, GRID_METRICS,
};
use crate::knowledge::{build_index, load_corpus};
use crate::pipeline::{
    demo_corpus, fit_model, ErrorKind, Pipeline, PipelineError, Stages, VectorSource, INDEX_FILE, MODEL_FILE,
};
use crate::service::{serve, ServiceState};
use crate::signal_io::{read_csv_record_scaled, read_wfdb16_record, RecordStore};
use crate::synthetic::{generate_dataset, SyntheticSpec};

#[derive(Debug, Parser)]
#[command(name = "carex", version, about = "Causal ECG diagnosis, counterfactuals and grounded explanations")]
pub struct Cli {
    /// Pipeline config (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Record store directory; overrides `paths.store`.
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
    /// Artifact directory; overrides `paths.artifacts`.
    #[arg(long, global = true)]
    pub artifacts: Option<PathBuf>,
    /// Write the JSON result here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Store CSV or WFDB (.hea) records.
    Ingest {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Sampling rate of CSV inputs in Hz.
        #[arg(long, default_value_t = 500.0)]
        rate: f64,
        /// Lead names for CSV inputs without a header, comma separated.
        #[arg(long, value_delimiter = ',')]
        leads: Vec<String>,
        /// Multiplier applied to CSV values (e.g. 0.001 for microvolts).
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long)]
        patient: Option<String>,
        /// Acquisition time, seconds since the Unix epoch.
        #[arg(long)]
        acquired_at: Option<i64>,
    },
    /// Biomarker vectors for stored records (all when no id is given).
    Encode { ids: Vec<String> },
    /// Fit discretizer, structure and CPTs from a labeled manifest.
    Fit {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0)]
        skip: usize,
        #[arg(long)]
        take: Option<usize>,
    },
    /// Build the knowledge index from a JSON Lines corpus.
    Index {
        /// Corpus file; defaults to `paths.corpus`, else the bundled demo corpus.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Outcome posterior for a record.
    Infer { record_id: String },
    /// Minimal bin edits that flip the prediction to `target`.
    Counterfactual {
        record_id: String,
        #[arg(long)]
        target: String,
        #[arg(long)]
        max_edits: Option<usize>,
    },
    /// Grounded explanation with audit fields.
    Explain {
        record_id: String,
        #[arg(long, default_value = crate::synthetic::DEFAULT_QUERY)]
        query: String,
        #[arg(long)]
        no_fallback: bool,
    },
    /// Run ablation variants over a manifest and write report files.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "A0,A1,A2,A3,A4")]
        variants: Vec<String>,
        /// Report directory.
        #[arg(long, default_value = "reports")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        skip: usize,
        #[arg(long)]
        take: Option<usize>,
    },
    /// Generate synthetic records into the store plus a manifest.
    Synth {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(short = 'n', long, default_value_t = 100)]
        n: usize,
        /// Defaults to the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "manifest.jsonl")]
        manifest: PathBuf,
    },
    /// Serve the HTTP JSON API.
    Serve {
        #[arg(long, env = "CAREX_BIND", default_value = "127.0.0.1:8080")]
        bind: String,
    },
}

fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Io => 2,
        ErrorKind::Remote => 3,
        _ => 1,
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, S>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                eprint!("{text}");
            }
            return code;
        }
    };
    match execute(&cli) {
        Ok(value) => match emit(&cli, &value, out) {
            Ok(()) => 0,
            Err(e) => report(&e),
        },
        Err(e) => report(&e),
    }
}

fn report(e: &PipelineError) -> i32 {
    let kind = e.kind();
    eprintln!("{}", json!({ "error": kind.code(), "code": exit_code(kind), "detail": e.to_string() }));
    exit_code(kind)
}

fn emit(cli: &Cli, value: &serde_json::Value, out: &mut dyn Write) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match &cli.out {
        Some(p) => std::fs::write(p, text).map_err(|e| PipelineError::io(p, e)),
        None => out.write_all(text.as_bytes()).map_err(|e| PipelineError::io(Path::new("<stdout>"), e)),
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<serde_json::Value, PipelineError> {
    Ok(serde_json::to_value(v)?)
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = &cli.store {
        cfg.paths.store = Some(s.clone());
    }
    if let Some(a) = &cli.artifacts {
        cfg.paths.artifacts = Some(a.clone());
    }
    Ok(cfg)
}

fn open_store(cfg: &PipelineConfig) -> Result<RecordStore, PipelineError> {
    let root = cfg.paths.store.clone().ok_or_else(|| PipelineError::MissingArtifact("store (set --store)".into()))?;
    Ok(RecordStore::open(root)?)
}

fn artifact_dir(cfg: &PipelineConfig) -> Result<PathBuf, PipelineError> {
    let dir = cfg
        .paths
        .artifacts
        .clone()
        .ok_or_else(|| PipelineError::MissingArtifact("artifacts (set --artifacts)".into()))?;
    std::fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
    Ok(dir)
}

fn slice(rows: Vec<EvalExample>, skip: usize, take: Option<usize>) -> Vec<EvalExample> {
    rows.into_iter().skip(skip).take(take.unwrap_or(usize::MAX)).collect()
}

fn execute(cli: &Cli) -> Result<serde_json::Value, PipelineError> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Ingest { paths, rate, leads, scale, patient, acquired_at } => {
            let mut store = open_store(&cfg)?;
            let mut ids = Vec::new();
            for p in paths {
                let mut rec = if p.extension().is_some_and(|e| e == "hea") {
                    read_wfdb16_record(p)?
                } else {
                    read_csv_record_scaled(p, *rate, leads, *scale)?
                };
                if let Some(pid) = patient {
                    rec = rec.with_patient(pid.clone(), *acquired_at);
                }
                ids.push(store.store_record(&rec)?);
            }
            Ok(json!({ "stored": ids }))
        }
        Command::Encode { ids } => {
            let store = open_store(&cfg)?;
            let source = VectorSource::from_config(&cfg)?;
            let ids: Vec<String> =
                if ids.is_empty() { store.record_ids().map(str::to_string).collect() } else { ids.clone() };
            let vectors = ids.iter().map(|id| source.vector(&store, id)).collect::<Result<Vec<_>, _>>()?;
            to_json(&vectors)
        }
        Command::Fit { manifest, skip, take } => {
            let rows = slice(read_eval_manifest(manifest)?, *skip, *take);
            let store = open_store(&cfg)?;
            let source = VectorSource::from_config(&cfg)?;
            let mut vectors = Vec::with_capacity(rows.len());
            let mut labels = Vec::with_capacity(rows.len());
            for r in &rows {
                let label = r.gold_labels.first().cloned().or_else(|| r.gold_answer.clone()).ok_or_else(|| {
                    crate::biomarker::BiomarkerError::SchemaMismatch(format!("{} has no label", r.record_id))
                })?;
                vectors.push(source.vector(&store, &r.record_id)?);
                labels.push(label);
            }
            let model = fit_model(&cfg, &vectors, &labels)?;
            let path = artifact_dir(&cfg)?.join(MODEL_FILE);
            model.save(&path)?;
            Ok(json!({
                "model": path,
                "training_size": model.training_size,
                "nodes": model.network.nodes.iter().map(|n| &n.name).collect::<Vec<_>>(),
                "edges": model.network.edges,
                "outcome_prior": model.outcome_prior,
            }))
        }
        Command::Index { corpus } => {
            let docs = match corpus.as_ref().or(cfg.paths.corpus.as_ref()) {
                Some(p) => load_corpus(p)?,
                None => demo_corpus(),
            };
            let index = build_index(&docs)?;
            let path = artifact_dir(&cfg)?.join(INDEX_FILE);
            index.save(&path)?;
            Ok(json!({ "index": path, "docs": index.len(), "vocabulary": index.vocabulary.len() }))
        }
        Command::Infer { record_id } => {
            let p = Pipeline::load(cfg.clone())?;
            let ev = p.evidence(&open_store(&cfg)?, record_id)?;
            to_json(&p.posterior(&ev)?)
        }
        Command::Counterfactual { record_id, target, max_edits } => {
            let p = Pipeline::load(cfg.clone())?;
            let ev = p.evidence(&open_store(&cfg)?, record_id)?;
            to_json(&p.counterfactual(&ev, target, *max_edits)?)
        }
        Command::Explain { record_id, query, no_fallback } => {
            let p = Pipeline::load(cfg.clone())?;
            let store = open_store(&cfg)?;
            let pool = p.vectors.pool(&store);
            let fallback = no_fallback.then_some(false);
            to_json(&p.explain_record(&store, &pool, record_id, query, Stages::FULL, fallback)?)
        }
        Command::Evaluate { manifest, variants, out_dir, skip, take } => {
            let examples = slice(read_eval_manifest(manifest)?, *skip, *take);
            let variants = variants
                .iter()
                .map(|v| {
                    AblationConfig::variant(v).ok_or_else(|| {
                        PipelineError::Config(crate::config::ConfigError::Invalid(format!("unknown variant {v:?}")))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let p = Pipeline::load(cfg.clone())?;
            let store = open_store(&cfg)?;
            let reports = run_ablation(&p, &store, &examples, &variants)?;
            let mut files = Vec::new();
            for r in &reports {
                files.push(emit_report(r, out_dir)?.json);
            }
            let grid_path = emit_grid(&reports, out_dir)?;
            let grid: Vec<IndexMap<&str, serde_json::Value>> = reports
                .iter()
                .map(|r| {
                    let mut row: IndexMap<&str, serde_json::Value> = IndexMap::new();
                    row.insert("variant", json!(r.variant));
                    for (m, v) in GRID_METRICS.iter().zip(grid_values(r)) {
                        row.insert(m, json!(v));
                    }
                    row
                })
                .collect();
            Ok(json!({ "grid": grid, "grid_csv": grid_path, "reports": files }))
        }
        Command::Synth { spec, n, seed, manifest } => {
            let spec = match spec {
                Some(p) => SyntheticSpec::load(p)?,
                None => SyntheticSpec::default(),
            };
            let mut store = open_store(&cfg)?;
            let seed = seed.unwrap_or(cfg.seed);
            let rows = generate_dataset(&spec, *n, seed, &mut store, manifest)?;
            Ok(json!({ "records": rows.len(), "manifest": manifest, "seed": seed }))
        }
        Command::Serve { bind } => {
            let p = Pipeline::load(cfg.clone())?;
            let store = open_store(&cfg)?;
            let version = format!("{}-{}", env!("CARGO_PKG_VERSION"), &p.model.config_fingerprint[..12]);
            let state = ServiceState::new(p, version, store);
            let rt = tokio::runtime::Runtime::new().map_err(|e| PipelineError::io(Path::new("runtime"), e))?;
            rt.block_on(serve(state, bind)).map_err(|e| match e {
                crate::service::ServiceError::BindFailure { source, .. } => PipelineError::io(Path::new(bind), source),
                crate::service::ServiceError::Serve(source) => PipelineError::io(Path::new(bind), source),
            })?;
            Ok(json!({ "stopped": bind }))
        }
    }
}
