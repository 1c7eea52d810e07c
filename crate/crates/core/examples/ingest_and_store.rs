//! Writes a synthetic ECG to CSV, ingests it and lists the store.

use carex::signal_io::{read_csv_record, RecordStore};
use carex::synthetic::{sample_case_with_id, SyntheticSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let case = sample_case_with_id(&SyntheticSpec::default(), 11, "demo-001")?;

    let csv = dir.path().join("demo-001.csv");
    let mut text = case.record.lead_names.join(",") + "\n";
    for i in 0..case.record.num_samples() {
        let row: Vec<String> = case.record.samples.iter().map(|lead| lead[i].to_string()).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    std::fs::write(&csv, text)?;

    let rec = read_csv_record(&csv, case.record.sampling_rate_hz, &[])?.with_patient("patient-7", Some(1_700_000_000));
    let mut store = RecordStore::open(dir.path().join("store"))?;
    let id = store.store_record(&rec)?;
    println!("stored {id}: {} lead(s), {} samples", rec.num_leads(), rec.num_samples());

    let reopened = RecordStore::open(dir.path().join("store"))?;
    for id in reopened.record_ids() {
        println!("{id}: {}", serde_json::to_string(reopened.entry(id).unwrap())?);
    }
    println!("history of patient-7: {:?}", reopened.list_patient_history("patient-7"));
    Ok(())
}
