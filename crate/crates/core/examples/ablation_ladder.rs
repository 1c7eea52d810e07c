//! Fits a pipeline on synthetic records and runs the A0..A4 ablation ladder.

use carex::config::PipelineConfig;
use carex::eval::{emit_grid, grid_values, read_eval_manifest, run_ablation, AblationConfig, GRID_METRICS};
use carex::knowledge::build_index;
use carex::pipeline::{demo_corpus, demo_descriptors, demo_lexicon, fit_model, Pipeline, VectorSource};
use carex::signal_io::RecordStore;
use carex::synthetic::{generate_dataset, SyntheticSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let config = PipelineConfig::default();
    let mut store = RecordStore::open(dir.path().join("store"))?;
    let manifest = dir.path().join("manifest.jsonl");
    let rows = generate_dataset(&SyntheticSpec::default(), 160, 1, &mut store, &manifest)?;

    let vectors = VectorSource::waveform();
    let (train, test) = rows.split_at(120);
    let xs = train.iter().map(|r| vectors.vector(&store, &r.record_id)).collect::<Result<Vec<_>, _>>()?;
    let ys: Vec<String> = train.iter().map(|r| r.gold_labels[0].clone()).collect();
    let model = fit_model(&config, &xs, &ys)?;
    let index = build_index(&demo_corpus())?;
    let pipeline = Pipeline::new(config, model, Some(index), demo_lexicon(), demo_descriptors(), vectors)?;

    let examples: Vec<_> = read_eval_manifest(&manifest)?.into_iter().skip(train.len()).collect();
    assert_eq!(examples.len(), test.len());
    let reports = run_ablation(&pipeline, &store, &examples, &AblationConfig::ladder())?;

    print!("{:<8}", "variant");
    GRID_METRICS.iter().for_each(|m| print!("{m:>9}"));
    println!();
    for r in &reports {
        print!("{:<8}", r.variant);
        grid_values(r).iter().for_each(|v| print!("{v:>9.3}"));
        println!();
    }
    let grid = emit_grid(&reports, dir.path())?;
    println!("\n{}", std::fs::read_to_string(grid)?);
    Ok(())
}
