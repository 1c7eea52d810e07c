//! Starts the JSON service on an ephemeral port and queries it.

use carex::config::PipelineConfig;
use carex::knowledge::build_index;
use carex::pipeline::{demo_corpus, demo_descriptors, demo_lexicon, fit_model, Pipeline, VectorSource};
use carex::service::{router, ServiceState};
use carex::signal_io::RecordStore;
use carex::synthetic::{generate_dataset, SyntheticSpec};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let config = PipelineConfig::default();
    let mut store = RecordStore::open(dir.path().join("store"))?;
    let rows = generate_dataset(&SyntheticSpec::default(), 60, 2, &mut store, &dir.path().join("m.jsonl"))?;
    let vectors = VectorSource::waveform();
    let xs = rows.iter().map(|r| vectors.vector(&store, &r.record_id)).collect::<Result<Vec<_>, _>>()?;
    let ys: Vec<String> = rows.iter().map(|r| r.gold_labels[0].clone()).collect();
    let model = fit_model(&config, &xs, &ys)?;
    let index = build_index(&demo_corpus())?;
    let pipeline = Pipeline::new(config, model, Some(index), demo_lexicon(), demo_descriptors(), vectors)?;
    let state = ServiceState::new(pipeline, "example", store);

    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}", listener.local_addr()?);
    tokio::spawn(async move { axum::serve(listener, router(state)).await });
    println!("listening on {base}");

    let id = rows[0].record_id.clone();
    let out = tokio::task::spawn_blocking(move || -> Result<Vec<String>, reqwest::Error> {
        let c = reqwest::blocking::Client::new();
        Ok(vec![
            c.get(format!("{base}/health")).send()?.text()?,
            c.get(format!("{base}/records/{id}/posterior")).send()?.text()?,
            c.post(format!("{base}/records/{id}/counterfactual"))
                .body(r#"{"target":"ARRH","max_edits":2}"#)
                .send()?
                .text()?,
            c.get(format!("{base}/records/missing/posterior")).send()?.text()?,
        ])
    })
    .await??;
    for line in out {
        println!("{line}");
    }
    Ok(())
}
