#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use carex::config::PipelineConfig;
use carex::knowledge::build_index;
use carex::pipeline::{demo_corpus, fit_model, Pipeline, VectorSource, INDEX_FILE, MODEL_FILE};
use carex::signal_io::RecordStore;
use carex::synthetic::{generate_dataset, ManifestRow, SyntheticSpec};

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub config: PipelineConfig,
    pub config_path: PathBuf,
    pub manifest: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl Fixture {
    pub fn store(&self) -> RecordStore {
        RecordStore::open(self.config.paths.store.as_ref().unwrap()).unwrap()
    }

    pub fn pipeline(&self) -> Pipeline {
        Pipeline::load(self.config.clone()).unwrap()
    }
}

/// `n` synthetic records; the model is fitted on the first `train` and the
/// demo index is written next to it.
pub fn fixture(n: usize, train: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let mut config = PipelineConfig::default();
    config.paths.store = Some(dir.path().join("store"));
    config.paths.artifacts = Some(dir.path().join("artifacts"));
    let manifest = dir.path().join("manifest.jsonl");
    let mut store = RecordStore::open(config.paths.store.as_ref().unwrap()).unwrap();
    let rows = generate_dataset(&SyntheticSpec::default(), n, 3, &mut store, &manifest).unwrap();

    let source = VectorSource::waveform();
    let vectors: Vec<_> = rows[..train].iter().map(|r| source.vector(&store, &r.record_id).unwrap()).collect();
    let labels: Vec<String> = rows[..train].iter().map(|r| r.gold_labels[0].clone()).collect();
    let model = fit_model(&config, &vectors, &labels).unwrap();
    let art = config.paths.artifacts.clone().unwrap();
    std::fs::create_dir_all(&art).unwrap();
    model.save(&art.join(MODEL_FILE)).unwrap();
    build_index(&demo_corpus()).unwrap().save(&art.join(INDEX_FILE)).unwrap();

    let config_path = dir.path().join("config.json");
    config.save(&config_path).unwrap();
    Fixture { dir, config, config_path, manifest, rows }
}

/// Minimal HTTP server answering each connection with the next scripted
/// `(status, body)`; records request bodies.
pub struct Stub {
    pub url: String,
    pub requests: Arc<Mutex<Vec<String>>>,
    _thread: JoinHandle<()>,
}

pub fn stub(responses: Vec<(u16, String)>) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let seen = requests.clone();
    let thread = std::thread::spawn(move || {
        for (status, body) in responses {
            let Ok((mut sock, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(sock.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
            }
            let mut buf = vec![0u8; len];
            let _ = reader.read_exact(&mut buf);
            seen.lock().unwrap().push(String::from_utf8_lossy(&buf).into_owned());
            let reply = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = sock.write_all(reply.as_bytes());
        }
    });
    Stub { url, requests, _thread: thread }
}

pub fn completion(text: &str) -> String {
    serde_json::json!({ "choices": [{ "message": { "role": "assistant", "content": text } }] }).to_string()
}
