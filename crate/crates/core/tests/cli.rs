mod common;

use std::path::Path;

use carex::config::PipelineConfig;
use carex::eval::{emit_report, read_eval_manifest, run_ablation, AblationConfig};
use serde_json::Value;
use sha2::{Digest, Sha256};

fn run(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let code = carex::cli::run(std::iter::once("carex").chain(args.iter().copied()), &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn run_ok(args: &[&str]) -> Value {
    let (code, out) = run(args);
    assert_eq!(code, 0, "{args:?} -> {out}");
    serde_json::from_str(&out).unwrap()
}

fn digest(path: &Path) -> String {
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(run(&["frobnicate"]).0, 1);
    assert_eq!(run(&["infer"]).0, 1);
    let (code, out) = run(&["--help"]);
    assert_eq!(code, 0);
    for sub in ["ingest", "encode", "fit", "index", "infer", "counterfactual", "explain", "evaluate", "synth", "serve"]
    {
        assert!(out.contains(sub), "help lacks {sub}");
    }
}

#[test]
fn io_and_validation_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.json");
    assert_eq!(run(&["--config", missing.to_str().unwrap(), "infer", "x"]).0, 2);

    let f = common::fixture(20, 20);
    let cfg = f.config_path.to_str().unwrap();
    assert_eq!(run(&["--config", cfg, "infer", "no-such-record"]).0, 1);
    assert_eq!(run(&["--config", cfg, "counterfactual", &f.rows[0].record_id, "--target", "BOGUS"]).0, 1);
    let no_model = dir.path().join("empty-artifacts");
    assert_ne!(run(&["--config", cfg, "--artifacts", no_model.to_str().unwrap(), "infer", "x"]).0, 0);
}

#[test]
fn infer_and_counterfactual_match_library() {
    let f = common::fixture(40, 40);
    let cfg = f.config_path.to_str().unwrap();
    let p = f.pipeline();
    let store = f.store();
    for row in f.rows.iter().take(5) {
        let ev = p.evidence(&store, &row.record_id).unwrap();
        let post = p.posterior(&ev).unwrap();
        assert_eq!(run_ok(&["--config", cfg, "infer", &row.record_id]), serde_json::to_value(&post).unwrap());

        let target = if post.argmax() == "NORM" { "ARRH" } else { "NORM" };
        let cli = run_ok(&["--config", cfg, "counterfactual", &row.record_id, "--target", target, "--max-edits", "2"]);
        let lib = p.counterfactual(&ev, target, Some(2)).unwrap();
        assert_eq!(cli, serde_json::to_value(&lib).unwrap());
    }
}

#[test]
fn explain_writes_to_out_file() {
    let f = common::fixture(20, 20);
    let out = f.dir.path().join("explain.json");
    let (code, stdout) = run(&[
        "--config",
        f.config_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "explain",
        &f.rows[3].record_id,
        "--no-fallback",
    ]);
    assert_eq!(code, 0);
    assert!(stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(v["payload"]["used_fallback"], false);
    assert_eq!(v["stages"]["verifier_enabled"], true);
}

#[test]
fn evaluate_reports_match_library_byte_for_byte() {
    let f = common::fixture(60, 40);
    let cfg = f.config_path.to_str().unwrap();
    let cli_dir = f.dir.path().join("cli_reports");
    let v = run_ok(&[
        "--config",
        cfg,
        "evaluate",
        "--manifest",
        f.manifest.to_str().unwrap(),
        "--skip",
        "40",
        "--out-dir",
        cli_dir.to_str().unwrap(),
    ]);
    assert_eq!(v["grid"].as_array().unwrap().len(), 5);

    let lib_dir = f.dir.path().join("lib_reports");
    let examples: Vec<_> = read_eval_manifest(&f.manifest).unwrap().into_iter().skip(40).collect();
    let reports = run_ablation(&f.pipeline(), &f.store(), &examples, &AblationConfig::ladder()).unwrap();
    for r in &reports {
        let files = emit_report(r, &lib_dir).unwrap();
        for path in [files.json, files.rows_csv, files.plot_csv] {
            let name = path.file_name().unwrap();
            assert_eq!(digest(&path), digest(&cli_dir.join(name)), "{name:?}");
        }
    }
    assert!(cli_dir.join("ablation_grid.csv").exists());
}

#[test]
fn synth_ingest_encode_fit_index_flow() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let art = dir.path().join("art");
    let manifest = dir.path().join("m.jsonl");
    let (s, a, m) = (store.to_str().unwrap(), art.to_str().unwrap(), manifest.to_str().unwrap());
    let base = ["--store", s, "--artifacts", a];
    let with = |rest: &[&str]| -> Vec<String> { base.iter().chain(rest).map(|x| x.to_string()).collect() };
    let call = |rest: &[&str]| {
        let args = with(rest);
        run_ok(&args.iter().map(String::as_str).collect::<Vec<_>>())
    };

    assert_eq!(call(&["synth", "-n", "30", "--seed", "5", "--manifest", m])["records"], 30);
    let fit = call(&["fit", "--manifest", m, "--take", "30"]);
    assert_eq!(fit["training_size"], 30);
    assert_eq!(call(&["index"])["docs"], 24);
    assert_eq!(call(&["encode"]).as_array().unwrap().len(), 30);

    let csv = dir.path().join("new.csv");
    let rec = first_lead(&store);
    let mut body = String::from("II\n");
    for x in &rec {
        body.push_str(&format!("{x}\n"));
    }
    std::fs::write(&csv, body).unwrap();
    let stored = call(&["ingest", csv.to_str().unwrap(), "--patient", "p-1", "--acquired-at", "100"]);
    let id = stored["stored"][0].as_str().unwrap().to_string();
    assert_eq!(id, "new");
    let enc = call(&["encode", &id]);
    assert_eq!(enc.as_array().unwrap().len(), 1);
    assert!(call(&["infer", &id])["probs"].is_object());
}

fn first_lead(root: &Path) -> Vec<f64> {
    let store = carex::signal_io::RecordStore::open(root).unwrap();
    let id = store.record_ids().next().unwrap().to_string();
    store.load_record(&id).unwrap().samples[0].clone()
}

#[test]
fn config_round_trip_is_idempotent() {
    let f = common::fixture(10, 10);
    let text = std::fs::read_to_string(&f.config_path).unwrap();
    let once: PipelineConfig = serde_json::from_str(&text).unwrap();
    let again = serde_json::to_string_pretty(&once).unwrap();
    let twice: PipelineConfig = serde_json::from_str(&again).unwrap();
    assert_eq!(once, twice);
    assert_eq!(again, serde_json::to_string_pretty(&twice).unwrap());
    assert_eq!(once, f.config);
}
