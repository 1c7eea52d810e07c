use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{classification_metrics, EvalError, LabelScore};
use crate::agents::GeneratorMode;
use crate::grounding::{context_relevance, crc, groundedness, srs};
use crate::pipeline::{Pipeline, PipelineError, Stages};
use crate::signal_io::RecordStore;

/// One rung of the ablation ladder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub name: String,
    #[serde(flatten)]
    pub stages: Stages,
}

impl AblationConfig {
    /// A0 (latent only) through A4 (all stages), each adding one stage.
    pub fn ladder() -> Vec<AblationConfig> {
        let mut s = Stages::LATENT_ONLY;
        let mut out = vec![AblationConfig { name: "A0".into(), stages: s }];
        for (i, step) in [
            |s: &mut Stages| s.graph_enabled = true,
            |s: &mut Stages| s.rag_enabled = true,
            |s: &mut Stages| s.verifier_enabled = true,
            |s: &mut Stages| s.counterfactual_enabled = true,
        ]
        .iter()
        .enumerate()
        {
            step(&mut s);
            out.push(AblationConfig { name: format!("A{}", i + 1), stages: s });
        }
        out
    }

    pub fn variant(name: &str) -> Option<AblationConfig> {
        Self::ladder().into_iter().find(|v| v.name.eq_ignore_ascii_case(name))
    }
}

/// One manifest line. Either `gold_labels` (set-valued) or `gold_answer`
/// (single free-text answer compared after normalization) is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalExample {
    pub record_id: String,
    #[serde(default)]
    pub query: String,
    #[serde(default)]
    pub gold_labels: Vec<String>,
    #[serde(default)]
    pub gold_answer: Option<String>,
}

pub fn read_eval_manifest(path: &Path) -> Result<Vec<EvalExample>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::io(path, e))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).map_err(EvalError::from)).collect()
}

/// Lowercase, punctuation dropped, leading article removed, whitespace
/// collapsed.
pub fn normalize_answer(s: &str) -> String {
    let cleaned: String =
        s.to_lowercase().chars().map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' }).collect();
    let mut words: Vec<&str> = cleaned.split_whitespace().collect();
    if matches!(words.first(), Some(&("a" | "an" | "the"))) {
        words.remove(0);
    }
    words.join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualSummary {
    pub target: String,
    pub achieved: bool,
    pub edits: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub record_id: String,
    pub predicted: Vec<String>,
    pub gold: Vec<String>,
    pub correct: bool,
    pub crc: f64,
    pub groundedness: f64,
    pub context_relevance: f64,
    pub hr: f64,
    pub ungroundable: bool,
    pub srs: f64,
    pub used_fallback: bool,
    pub facts: usize,
    pub counterfactual: Option<CounterfactualSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub n: usize,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub mean_crc: f64,
    pub mean_groundedness: f64,
    pub mean_context_relevance: f64,
    pub mean_hr: f64,
    pub mean_srs: f64,
    pub fallback_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub stages: Stages,
    pub backbone: String,
    pub config_fingerprint: String,
    pub model_fingerprint: String,
    pub formulas: IndexMap<String, String>,
    pub labels: Vec<String>,
    pub per_label: Vec<LabelScore>,
    pub aggregates: Aggregates,
    pub rows: Vec<EvalRow>,
}

fn formulas() -> IndexMap<String, String> {
    [
        ("accuracy", "exact_set_match"),
        ("macro_prf", "macro_mean_per_label;vacuous_label=1"),
        ("prediction", "posterior_argmax;prior_argmax_without_graph"),
        ("gold_answer", "lowercase;strip_punctuation;strip_leading_article"),
        ("crc", "top_n_reference_drivers_named;dice>=tau_match_or_token_run"),
        ("groundedness", "sentences_with_fact_dice>=tau_match/sentences"),
        ("context_relevance", "tfidf_cosine(query,explanation)"),
        ("hr", "1-matched_facts/retrieved_facts;dice>=tau_match;0_if_no_facts"),
        ("srs", "tfidf_cosine(explanation,concat(facts))"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

pub fn backbone_name(p: &Pipeline) -> String {
    match p.config.generator.mode {
        GeneratorMode::Offline => "offline".into(),
        GeneratorMode::Remote => p.config.generator.model.clone(),
    }
}

fn mean(xs: impl Iterator<Item = f64>, n: usize) -> f64 {
    xs.sum::<f64>() / n as f64
}

/// Recomputes the aggregates from rows.
pub fn aggregate(rows: &[EvalRow], labels: &[String]) -> Result<(Aggregates, Vec<LabelScore>), EvalError> {
    let pred: Vec<BTreeSet<String>> = rows.iter().map(|r| r.predicted.iter().cloned().collect()).collect();
    let gold: Vec<BTreeSet<String>> = rows.iter().map(|r| r.gold.iter().cloned().collect()).collect();
    let m = classification_metrics(&pred, &gold, labels)?;
    let n = rows.len();
    Ok((
        Aggregates {
            n,
            accuracy: m.accuracy,
            macro_precision: m.macro_precision,
            macro_recall: m.macro_recall,
            macro_f1: m.macro_f1,
            mean_crc: mean(rows.iter().map(|r| r.crc), n),
            mean_groundedness: mean(rows.iter().map(|r| r.groundedness), n),
            mean_context_relevance: mean(rows.iter().map(|r| r.context_relevance), n),
            mean_hr: mean(rows.iter().map(|r| r.hr), n),
            mean_srs: mean(rows.iter().map(|r| r.srs), n),
            fallback_rate: mean(rows.iter().map(|r| f64::from(u8::from(r.used_fallback))), n),
        },
        m.per_label,
    ))
}

/// Runs every example through the enabled stages of each variant. CRC is
/// always measured against the drivers of the full graph, so variants that
/// do not name them score below 1.
pub fn run_ablation(
    pipeline: &Pipeline,
    store: &RecordStore,
    examples: &[EvalExample],
    variants: &[AblationConfig],
) -> Result<Vec<EvalReport>, PipelineError> {
    if examples.is_empty() {
        return Err(EvalError::EmptyDataset.into());
    }
    if pipeline.index.is_none() {
        if let Some(v) = variants.iter().find(|v| v.stages.rag_enabled) {
            return Err(EvalError::MissingArtifact(format!("rag (variant {})", v.name)).into());
        }
    }
    let pool = pipeline.vectors.pool(store);
    let outcome_states = pipeline.network().outcome_node().states.clone();
    let uses_answers = examples.iter().all(|e| e.gold_labels.is_empty() && e.gold_answer.is_some());
    let labels: Vec<String> = if uses_answers { Vec::new() } else { outcome_states };
    let cfg = &pipeline.config;

    let mut evidence = Vec::with_capacity(examples.len());
    for ex in examples {
        let ev = pipeline.evidence(store, &ex.record_id)?;
        let reference = pipeline.drivers(&ev)?;
        evidence.push((ev, reference));
    }

    let mut reports = Vec::with_capacity(variants.len());
    for variant in variants {
        let mut rows = Vec::with_capacity(examples.len());
        for (ex, (ev, reference)) in examples.iter().zip(&evidence) {
            let history = if pool.contains_key(&ex.record_id) {
                crate::agents::history_agent(store, &pool, &ex.record_id)
            } else {
                None
            };
            let e = pipeline.explain(ev, history, &ex.query, variant.stages, None)?;
            let text = &e.payload.explanation;
            let facts = e.message.retrieved.facts();
            let predicted = e.message.predicted_state().unwrap_or_default().to_string();
            let (predicted, gold) = if uses_answers {
                (
                    vec![normalize_answer(&predicted)],
                    vec![normalize_answer(ex.gold_answer.as_deref().unwrap_or_default())],
                )
            } else {
                (vec![predicted], ex.gold_labels.clone())
            };
            let correct = predicted.iter().collect::<BTreeSet<_>>() == gold.iter().collect::<BTreeSet<_>>();
            let (cr, s) = match &pipeline.index {
                Some(idx) => (context_relevance(&ex.query, text, idx), srs(text, &facts, idx)),
                None => (0.0, 0.0),
            };
            rows.push(EvalRow {
                record_id: ex.record_id.clone(),
                predicted,
                gold,
                correct,
                crc: crc(text, reference, &pipeline.descriptors, cfg.explain.top_n, cfg.retrieval.tau_match),
                groundedness: groundedness(text, &facts, cfg.retrieval.tau_match),
                context_relevance: cr,
                hr: e.payload.hallucination_score,
                ungroundable: e.match_report.ungroundable && variant.stages.verifier_enabled,
                srs: s,
                used_fallback: e.payload.used_fallback,
                facts: facts.len(),
                counterfactual: e.message.counterfactual.as_ref().map(|c| CounterfactualSummary {
                    target: c.target.clone(),
                    achieved: c.achieved,
                    edits: c.edits.iter().map(|d| format!("{}:{}->{}", d.factor, d.from_label, d.to_label)).collect(),
                }),
            });
        }
        let (aggregates, per_label) = aggregate(&rows, &labels)?;
        reports.push(EvalReport {
            variant: variant.name.clone(),
            stages: variant.stages,
            backbone: backbone_name(pipeline),
            config_fingerprint: cfg.fingerprint(),
            model_fingerprint: pipeline.model.config_fingerprint.clone(),
            formulas: formulas(),
            labels: per_label.iter().map(|l| l.label.clone()).collect(),
            per_label,
            aggregates,
            rows,
        });
    }
    Ok(reports)
}

/// Grid metrics in column order.
pub const GRID_METRICS: [&str; 6] = ["Acc", "F1", "CRC", "Ground.", "HR", "SRS"];

pub fn grid_values(r: &EvalReport) -> [f64; 6] {
    let a = &r.aggregates;
    [a.accuracy, a.macro_f1, a.mean_crc, a.mean_groundedness, a.mean_hr, a.mean_srs]
}

fn csv_err(path: &Path, e: csv::Error) -> EvalError {
    EvalError::io(path, std::io::Error::other(e))
}

/// Files written for one report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub json: PathBuf,
    pub rows_csv: PathBuf,
    pub plot_csv: PathBuf,
}

/// Writes `{variant}.json`, `{variant}_rows.csv` and `{variant}_plot.csv`
/// under `dir`.
pub fn emit_report(report: &EvalReport, dir: &Path) -> Result<ReportFiles, EvalError> {
    std::fs::create_dir_all(dir).map_err(|e| EvalError::io(dir, e))?;
    let files = ReportFiles {
        json: dir.join(format!("{}.json", report.variant)),
        rows_csv: dir.join(format!("{}_rows.csv", report.variant)),
        plot_csv: dir.join(format!("{}_plot.csv", report.variant)),
    };
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(&files.json, json + "\n").map_err(|e| EvalError::io(&files.json, e))?;

    let p = &files.rows_csv;
    let mut w = csv::Writer::from_path(p).map_err(|e| csv_err(p, e))?;
    w.write_record([
        "record_id",
        "predicted",
        "gold",
        "correct",
        "crc",
        "groundedness",
        "context_relevance",
        "hr",
        "ungroundable",
        "srs",
        "used_fallback",
        "facts",
        "counterfactual",
    ])
    .map_err(|e| csv_err(p, e))?;
    for r in &report.rows {
        let cf = r
            .counterfactual
            .as_ref()
            .map(|c| format!("{}|{}|{}", c.target, c.achieved, c.edits.join(";")))
            .unwrap_or_default();
        w.write_record([
            r.record_id.clone(),
            r.predicted.join(";"),
            r.gold.join(";"),
            r.correct.to_string(),
            r.crc.to_string(),
            r.groundedness.to_string(),
            r.context_relevance.to_string(),
            r.hr.to_string(),
            r.ungroundable.to_string(),
            r.srs.to_string(),
            r.used_fallback.to_string(),
            r.facts.to_string(),
            cf,
        ])
        .map_err(|e| csv_err(p, e))?;
    }
    w.flush().map_err(|e| EvalError::io(p, e))?;

    write_plot_rows(std::slice::from_ref(report), &files.plot_csv)?;
    Ok(files)
}

fn write_plot_rows(reports: &[EvalReport], path: &Path) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["variant", "backbone", "metric", "value"]).map_err(|e| csv_err(path, e))?;
    for r in reports {
        for (m, v) in GRID_METRICS.iter().zip(grid_values(r)) {
            w.write_record([r.variant.as_str(), r.backbone.as_str(), m, &v.to_string()])
                .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| EvalError::io(path, e))
}

/// Writes the variant × metric grid to `ablation_grid.csv` and the long-form
/// plot data for every variant to `plot_data.csv`.
pub fn emit_grid(reports: &[EvalReport], dir: &Path) -> Result<PathBuf, EvalError> {
    std::fs::create_dir_all(dir).map_err(|e| EvalError::io(dir, e))?;
    let path = dir.join("ablation_grid.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    let mut header = vec!["variant", "backbone"];
    header.extend(GRID_METRICS);
    w.write_record(&header).map_err(|e| csv_err(&path, e))?;
    for r in reports {
        let mut rec = vec![r.variant.clone(), r.backbone.clone()];
        rec.extend(grid_values(r).iter().map(f64::to_string));
        w.write_record(&rec).map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| EvalError::io(&path, e))?;
    write_plot_rows(reports, &dir.join("plot_data.csv"))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_is_cumulative() {
        let l = AblationConfig::ladder();
        assert_eq!(l.len(), 5);
        assert_eq!(l[0].stages, Stages::LATENT_ONLY);
        assert_eq!(l[4].stages, Stages::FULL);
        let count = |s: &Stages| {
            [s.graph_enabled, s.rag_enabled, s.verifier_enabled, s.counterfactual_enabled]
                .iter()
                .filter(|b| **b)
                .count()
        };
        for (i, v) in l.iter().enumerate() {
            assert_eq!(count(&v.stages), i);
        }
        assert!(l[1].stages.graph_enabled && !l[1].stages.rag_enabled);
        assert!(l[2].stages.rag_enabled && !l[2].stages.verifier_enabled);
        assert!(l[3].stages.verifier_enabled && !l[3].stages.counterfactual_enabled);
        assert_eq!(AblationConfig::variant("a3"), Some(l[3].clone()));
    }

    #[test]
    fn answer_normalization() {
        assert_eq!(normalize_answer("The  Sinus Rhythm."), "sinus rhythm");
        assert_eq!(normalize_answer("an ARRH!"), "arrh");
        assert_eq!(normalize_answer("theory"), "theory");
    }

    fn row(id: &str, pred: &str, gold: &str, crc: f64) -> EvalRow {
        EvalRow {
            record_id: id.into(),
            predicted: vec![pred.into()],
            gold: vec![gold.into()],
            correct: pred == gold,
            crc,
            groundedness: 0.5,
            context_relevance: 0.25,
            hr: 0.0,
            ungroundable: false,
            srs: 0.1,
            used_fallback: false,
            facts: 2,
            counterfactual: None,
        }
    }

    #[test]
    fn aggregates_from_rows() {
        let rows = vec![row("a", "X", "X", 1.0), row("b", "X", "Y", 0.0), row("c", "Y", "Y", 0.5)];
        let (a, per) = aggregate(&rows, &["X".into(), "Y".into()]).unwrap();
        assert!((a.accuracy - 2.0 / 3.0).abs() < 1e-12);
        assert!((a.mean_crc - 0.5).abs() < 1e-12);
        // X: tp1 fp1 fn0 -> P .5 R 1; Y: tp1 fp0 fn1 -> P 1 R .5
        assert!((per[0].precision - 0.5).abs() < 1e-12);
        assert!((per[1].recall - 0.5).abs() < 1e-12);
        assert!((a.macro_f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn csv_row_count_matches() {
        let rows = vec![row("a", "X", "X", 1.0), row("b", "X", "Y", 0.0)];
        let (aggregates, per_label) = aggregate(&rows, &[]).unwrap();
        let report = EvalReport {
            variant: "A1".into(),
            stages: Stages::LATENT_ONLY,
            backbone: "offline".into(),
            config_fingerprint: "x".into(),
            model_fingerprint: "y".into(),
            formulas: formulas(),
            labels: vec![],
            per_label,
            aggregates,
            rows,
        };
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&report, dir.path()).unwrap();
        let text = std::fs::read_to_string(&files.rows_csv).unwrap();
        assert_eq!(text.lines().count(), 1 + report.rows.len());
        let back: EvalReport = serde_json::from_str(&std::fs::read_to_string(&files.json).unwrap()).unwrap();
        assert_eq!(back.aggregates, report.aggregates);
        let plot = std::fs::read_to_string(&files.plot_csv).unwrap();
        assert_eq!(plot.lines().count(), 1 + GRID_METRICS.len());
    }
}
