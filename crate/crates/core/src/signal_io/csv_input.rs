use std::collections::HashSet;
use std::path::Path;

use indexmap::IndexMap;

use super::{EcgRecord, SignalIoError};
use crate::biomarker::{BiomarkerVector, Quality};

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>, SignalIoError> {
    let file = std::fs::File::open(path).map_err(|e| SignalIoError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(file))
}

fn csv_err(e: csv::Error) -> SignalIoError {
    let row = e.position().map_or(0, |p| p.line() as usize);
    SignalIoError::MalformedCsv { row, reason: e.to_string() }
}

/// Reads a record from a CSV file with one column per lead, values in mV.
///
/// A first row containing any non-numeric cell is treated as a header and
/// supplies lead names when `lead_names` is empty.
pub fn read_csv_record(
    path: impl AsRef<Path>,
    sampling_rate_hz: f64,
    lead_names: &[String],
) -> Result<EcgRecord, SignalIoError> {
    read_csv_record_scaled(path, sampling_rate_hz, lead_names, 1.0)
}

/// Like [`read_csv_record`], multiplying every value by `scale` at ingest.
pub fn read_csv_record_scaled(
    path: impl AsRef<Path>,
    sampling_rate_hz: f64,
    lead_names: &[String],
    scale: f64,
) -> Result<EcgRecord, SignalIoError> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    let mut header: Option<Vec<String>> = None;
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;

    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = rec.position().map_or(i + 1, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let parsed: Vec<Option<f64>> = rec.iter().map(|c| c.parse::<f64>().ok()).collect();
        if i == 0 && parsed.iter().any(Option::is_none) {
            header = Some(rec.iter().map(str::to_string).collect());
            width = Some(rec.len());
            continue;
        }
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(SignalIoError::MalformedCsv {
                row,
                reason: format!("expected {w} columns, found {}", rec.len()),
            });
        }
        if columns.is_empty() {
            columns = vec![Vec::new(); w];
        }
        for (c, (cell, v)) in rec.iter().zip(parsed).enumerate() {
            match v {
                Some(v) if v.is_finite() => columns[c].push(v * scale),
                _ => {
                    return Err(SignalIoError::MalformedCsv {
                        row,
                        reason: format!("non-numeric cell {cell:?} in column {}", c + 1),
                    })
                }
            }
        }
    }

    let width = width.unwrap_or(0);
    if columns.is_empty() {
        columns = vec![Vec::new(); width.max(1)];
    }
    let names: Vec<String> = if !lead_names.is_empty() {
        if lead_names.len() != columns.len() {
            return Err(SignalIoError::MalformedCsv {
                row: 1,
                reason: format!("{} lead names given for {} columns", lead_names.len(), columns.len()),
            });
        }
        lead_names.to_vec()
    } else if let Some(h) = header {
        h
    } else {
        (1..=columns.len()).map(|i| format!("lead{i}")).collect()
    };

    let record_id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "record".into());
    EcgRecord::new(record_id, sampling_rate_hz, names, columns)
}

/// Reads a precomputed biomarker table: first column `record_id`, one column
/// per factor, empty cells meaning "missing".
pub fn read_feature_csv(path: impl AsRef<Path>) -> Result<Vec<BiomarkerVector>, SignalIoError> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    let mut rows = rdr.records();
    let header = match rows.next() {
        Some(h) => h.map_err(csv_err)?,
        None => return Err(SignalIoError::MalformedCsv { row: 1, reason: "empty feature table".into() }),
    };
    if header.len() < 2 {
        return Err(SignalIoError::MalformedCsv {
            row: 1,
            reason: "header needs record_id plus at least one factor".into(),
        });
    }
    let factors: Vec<String> = header.iter().skip(1).map(str::to_string).collect();

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, rec) in rows.enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = rec.position().map_or(i + 2, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if rec.len() != header.len() {
            return Err(SignalIoError::MalformedCsv {
                row,
                reason: format!("expected {} columns, found {}", header.len(), rec.len()),
            });
        }
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(SignalIoError::MalformedCsv { row, reason: "empty record_id".into() });
        }
        if !seen.insert(id.clone()) {
            return Err(SignalIoError::DuplicateRecordId(id));
        }
        let mut values = IndexMap::new();
        let mut quality = IndexMap::new();
        for (name, cell) in factors.iter().zip(rec.iter().skip(1)) {
            if cell.is_empty() {
                quality.insert(name.clone(), Quality::Missing);
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => {
                    values.insert(name.clone(), v);
                    quality.insert(name.clone(), Quality::Ok);
                }
                _ => {
                    return Err(SignalIoError::MalformedCsv {
                        row,
                        reason: format!("non-numeric value {cell:?} for {name}"),
                    })
                }
            }
        }
        out.push(BiomarkerVector { record_id: id, values, quality });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn two_columns_five_thousand_rows() {
        let mut s = String::new();
        for i in 0..5000 {
            s.push_str(&format!("{},{}\n", i as f64 * 0.001, -0.5));
        }
        let f = write(&s);
        let rec = read_csv_record(f.path(), 500.0, &[]).unwrap();
        assert_eq!(rec.num_leads(), 2);
        assert_eq!(rec.num_samples(), 5000);
        assert_eq!(rec.lead_names, vec!["lead1", "lead2"]);
        assert_eq!(rec.samples[1][4999], -0.5);
    }

    #[test]
    fn header_row_supplies_lead_names() {
        let mut s = String::from("I,II\n");
        for _ in 0..1000 {
            s.push_str("0.1,0.2\n");
        }
        let rec = read_csv_record(write(&s).path(), 500.0, &[]).unwrap();
        assert_eq!(rec.lead_names, vec!["I", "II"]);
        assert_eq!(rec.num_samples(), 1000);
    }

    #[test]
    fn text_row_mid_file_names_the_row() {
        let mut s = String::new();
        for i in 0..2000 {
            if i == 700 {
                s.push_str("oops,1\n");
            } else {
                s.push_str("1,2\n");
            }
        }
        match read_csv_record(write(&s).path(), 500.0, &[]) {
            Err(SignalIoError::MalformedCsv { row, .. }) => assert_eq!(row, 701),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ragged_rows_rejected() {
        let mut s = String::new();
        for i in 0..2000 {
            s.push_str(if i == 10 { "1\n" } else { "1,2\n" });
        }
        assert!(matches!(
            read_csv_record(write(&s).path(), 500.0, &[]),
            Err(SignalIoError::MalformedCsv { row: 11, .. })
        ));
    }

    #[test]
    fn ten_rows_is_too_short() {
        let s = "1\n".repeat(10);
        assert!(matches!(
            read_csv_record(write(&s).path(), 500.0, &[]),
            Err(SignalIoError::TooShort { samples: 10, .. })
        ));
    }

    #[test]
    fn scale_is_applied() {
        let s = "1000\n".repeat(1000);
        let rec = read_csv_record_scaled(write(&s).path(), 500.0, &["II".into()], 0.001).unwrap();
        assert_eq!(rec.samples[0][0], 1.0);
    }

    #[test]
    fn feature_csv_values_and_missing() {
        let f = write("record_id,qt_interval_ms,heart_rate_bpm\na,360,60\nb,,72\n");
        let v = read_feature_csv(f.path()).unwrap();
        assert_eq!(v[0].values["qt_interval_ms"], 360.0);
        assert_eq!(v[1].quality["qt_interval_ms"], Quality::Missing);
        assert!(!v[1].values.contains_key("qt_interval_ms"));
        assert_eq!(v[1].quality["heart_rate_bpm"], Quality::Ok);
    }

    #[test]
    fn feature_csv_duplicate_id() {
        let f = write("record_id,qt_interval_ms\na,1\na,2\n");
        assert!(matches!(
            read_feature_csv(f.path()),
            Err(SignalIoError::DuplicateRecordId(id)) if id == "a"
        ));
    }

    #[test]
    fn feature_csv_non_numeric() {
        let f = write("record_id,qt_interval_ms\na,long\n");
        assert!(matches!(read_feature_csv(f.path()), Err(SignalIoError::MalformedCsv { row: 2, .. })));
    }
}
