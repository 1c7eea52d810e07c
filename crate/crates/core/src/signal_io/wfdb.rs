//! WFDB header + format-16 signal reader.

use std::path::Path;

use super::{EcgRecord, SignalIoError};

/// Default ADC gain when a header omits it (WFDB convention).
const DEFAULT_GAIN: f64 = 200.0;

#[derive(Debug)]
struct SignalSpec {
    file_name: String,
    gain: f64,
    baseline: f64,
    description: Option<String>,
}

fn leading_number(field: &str) -> &str {
    let end = field
        .find(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-' || c == '+' || c == 'e' || c == 'E'))
        .unwrap_or(field.len());
    &field[..end]
}

fn mismatch(msg: impl Into<String>) -> SignalIoError {
    SignalIoError::HeaderMismatch(msg.into())
}

/// Parses `gain(baseline)/units`; every part after the gain is optional.
fn parse_gain(field: &str) -> Result<(f64, Option<f64>), SignalIoError> {
    let no_units = field.split('/').next().unwrap_or("");
    let (gain_s, base_s) = match no_units.find('(') {
        Some(i) => {
            let close =
                no_units[i..].find(')').ok_or_else(|| mismatch(format!("unterminated baseline in {field:?}")))?;
            (&no_units[..i], Some(&no_units[i + 1..i + close]))
        }
        None => (no_units, None),
    };
    let gain: f64 = gain_s.parse().map_err(|_| mismatch(format!("bad gain {field:?}")))?;
    let gain = if gain == 0.0 { DEFAULT_GAIN } else { gain };
    let baseline =
        base_s.map(|b| b.parse::<f64>().map_err(|_| mismatch(format!("bad baseline {field:?}")))).transpose()?;
    Ok((gain, baseline))
}

/// Reads a WFDB record whose signals are stored in format 16.
///
/// Samples are converted to millivolts as `(raw - baseline) / gain`.
pub fn read_wfdb16_record(header_path: impl AsRef<Path>) -> Result<EcgRecord, SignalIoError> {
    let header_path = header_path.as_ref();
    let text = std::fs::read_to_string(header_path).map_err(|e| SignalIoError::io(header_path, e))?;
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));

    let record_line = lines.next().ok_or_else(|| mismatch("empty header"))?;
    let fields: Vec<&str> = record_line.split_whitespace().collect();
    if fields.len() < 4 {
        return Err(mismatch(format!(
            "record line needs name, signal count, frequency and sample count: {record_line:?}"
        )));
    }
    let record_name = fields[0].split('/').next().unwrap_or(fields[0]).to_string();
    let nsig: usize = fields[1].parse().map_err(|_| mismatch(format!("bad signal count {:?}", fields[1])))?;
    let rate: f64 =
        leading_number(fields[2]).parse().map_err(|_| mismatch(format!("bad sampling frequency {:?}", fields[2])))?;
    let nsamp: usize = fields[3].parse().map_err(|_| mismatch(format!("bad sample count {:?}", fields[3])))?;

    let mut specs = Vec::with_capacity(nsig);
    for _ in 0..nsig {
        let line = lines.next().ok_or_else(|| mismatch("fewer signal lines than declared"))?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 2 {
            return Err(mismatch(format!("signal line too short: {line:?}")));
        }
        let format_code = f[1].split(['x', ':', '+']).next().unwrap_or("");
        if format_code != "16" {
            return Err(SignalIoError::UnsupportedFormat(f[1].to_string()));
        }
        let (gain, baseline) = match f.get(2) {
            Some(g) => parse_gain(g)?,
            None => (DEFAULT_GAIN, None),
        };
        // ADC zero (field 5) is the baseline when none is given in parentheses.
        let adc_zero = f.get(4).and_then(|z| z.parse::<f64>().ok());
        let description = if f.len() > 8 { Some(f[8..].join(" ")) } else { None };
        specs.push(SignalSpec {
            file_name: f[0].to_string(),
            gain,
            baseline: baseline.or(adc_zero).unwrap_or(0.0),
            description,
        });
    }

    // Signals sharing a file are interleaved sample-major in declaration order.
    let dir = header_path.parent().unwrap_or_else(|| Path::new("."));
    let mut samples = vec![Vec::with_capacity(nsamp); nsig];
    let mut done = vec![false; nsig];
    for first in 0..nsig {
        if done[first] {
            continue;
        }
        let file_name = &specs[first].file_name;
        let members: Vec<usize> = (first..nsig).filter(|&i| &specs[i].file_name == file_name).collect();
        let path = dir.join(file_name);
        let bytes = std::fs::read(&path).map_err(|e| SignalIoError::io(&path, e))?;
        let expected = nsamp * members.len() * 2;
        if bytes.len() != expected {
            return Err(mismatch(format!(
                "{file_name}: {} bytes on disk, header implies {expected} ({nsamp} samples x {} signals)",
                bytes.len(),
                members.len()
            )));
        }
        for (t, frame) in bytes.chunks_exact(2 * members.len()).enumerate() {
            for (j, &sig) in members.iter().enumerate() {
                let raw = i16::from_le_bytes([frame[2 * j], frame[2 * j + 1]]) as f64;
                let spec = &specs[sig];
                debug_assert_eq!(samples[sig].len(), t);
                samples[sig].push((raw - spec.baseline) / spec.gain);
            }
        }
        for &m in &members {
            done[m] = true;
        }
    }

    let lead_names =
        specs.iter().enumerate().map(|(i, s)| s.description.clone().unwrap_or_else(|| format!("sig{i}"))).collect();
    EcgRecord::new(record_name, rate, lead_names, samples)
}
