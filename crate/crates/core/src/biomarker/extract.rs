//! Per-beat delineation and record-level factor aggregation.
//!
//! The fiducial rules are coarse approximations: onsets and offsets are the
//! points where the wave falls within 10% of its amplitude from baseline, T
//! end within 5%. They are exact on template-beat synthetic signals, which
//! is what the recoverability checks rely on.

use super::{
    default_schema, HEART_RATE, PR_INTERVAL, QRS_DURATION, QTC_BAZETT, QT_INTERVAL, RR_RMSSD, ST_DEVIATION, T_AMPLITUDE,
};
use super::{detect_r_peaks, BiomarkerError, BiomarkerVector, Quality};
use crate::signal_io::EcgRecord;

const ONSET_FRACTION: f64 = 0.10;
const T_END_FRACTION: f64 = 0.05;

/// Milliseconds to a sample count at `fs`.
fn ms(fs: f64, v: f64) -> usize {
    (v * fs / 1000.0).round() as usize
}

/// Lead "II" when present, otherwise the first lead.
pub fn measurement_lead(rec: &EcgRecord) -> &str {
    rec.lead_names.iter().find(|n| n.as_str() == "II").unwrap_or(&rec.lead_names[0])
}

/// Mean of the flattest 40 ms window in `[from, to)`, scanning from the
/// latest window so ties prefer samples nearest the QRS.
fn isoelectric_level(x: &[f64], from: usize, to: usize, win: usize) -> Option<f64> {
    if to <= from || to - from < win || to > x.len() {
        return None;
    }
    let mut best: Option<(f64, usize)> = None;
    let mut start = to - win;
    loop {
        let w = &x[start..start + win];
        let (lo, hi) = w.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let range = hi - lo;
        if best.is_none_or(|(r, _)| range < r) {
            best = Some((range, start));
        }
        if start == from {
            break;
        }
        start -= 1;
    }
    best.map(|(_, s)| x[s..s + win].iter().sum::<f64>() / win as f64)
}

#[derive(Debug, Default, Clone, Copy)]
struct Beat {
    qrs_ms: Option<f64>,
    pr_ms: Option<f64>,
    qt_ms: Option<f64>,
    st_mv: Option<f64>,
    t_amp_mv: Option<f64>,
    t_end: Option<usize>,
}

fn delineate(x: &[f64], fs: f64, r: usize, prev_t_end: Option<usize>, next_r: Option<usize>) -> Beat {
    let mut beat = Beat::default();
    let n = x.len();
    let win40 = ms(fs, 40.0);

    let Some(base) = isoelectric_level(x, r.saturating_sub(ms(fs, 300.0)), r.saturating_sub(ms(fs, 20.0)), win40)
    else {
        return beat;
    };
    let amp = x[r] - base;
    if amp <= 0.0 {
        return beat;
    }
    let tol = ONSET_FRACTION * amp;

    let onset = (r.saturating_sub(ms(fs, 80.0))..r).rev().find(|&k| (x[k] - base).abs() < tol);
    let offset = (r + 1..(r + ms(fs, 100.0)).min(n)).find(|&k| (x[k] - base).abs() < tol);
    let (Some(onset), Some(offset)) = (onset, offset) else {
        return beat;
    };
    beat.qrs_ms = Some((offset - onset) as f64 * 1000.0 / fs);

    // PR-segment baseline: 40 ms ending 20 ms before QRS onset.
    let pr_end = onset.checked_sub(ms(fs, 20.0));
    let pr_base = pr_end
        .and_then(|e| e.checked_sub(win40).map(|s| (s, e)))
        .map(|(s, e)| x[s..e].iter().sum::<f64>() / (e - s) as f64);
    let Some(pr_base) = pr_base else {
        return beat;
    };

    let st_idx = offset + ms(fs, 60.0);
    if st_idx < n {
        beat.st_mv = Some(x[st_idx] - pr_base);
    }

    // T wave.
    let t_lo = offset + ms(fs, 80.0);
    let mut t_hi = (offset + ms(fs, 400.0)).min(n);
    if let Some(nr) = next_r {
        t_hi = t_hi.min(nr.saturating_sub(ms(fs, 100.0)));
    }
    if t_lo < t_hi {
        let t_peak = (t_lo..t_hi)
            .max_by(|&a, &b| (x[a] - pr_base).abs().total_cmp(&(x[b] - pr_base).abs()).then(b.cmp(&a)))
            .expect("non-empty window");
        let t_amp = x[t_peak] - pr_base;
        beat.t_amp_mv = Some(t_amp);
        let limit = next_r.unwrap_or(n).min(n);
        let t_end = (t_peak + 1..limit).find(|&k| (x[k] - pr_base).abs() <= T_END_FRACTION * t_amp.abs());
        if let Some(te) = t_end {
            beat.t_end = Some(te);
            beat.qt_ms = Some((te - onset) as f64 * 1000.0 / fs);
        }
    }

    // P wave: search between the previous T end and 80 ms before R.
    let mut p_lo = r.saturating_sub(ms(fs, 300.0));
    if let Some(te) = prev_t_end {
        p_lo = p_lo.max(te + 1);
    }
    let p_hi = r.saturating_sub(ms(fs, 80.0));
    if p_lo < p_hi {
        let p_peak = (p_lo..p_hi)
            .max_by(|&a, &b| (x[a] - pr_base).abs().total_cmp(&(x[b] - pr_base).abs()).then(b.cmp(&a)))
            .expect("non-empty window");
        let p_amp = (x[p_peak] - pr_base).abs();
        // Anything below 2% of R is noise, not a P wave.
        if p_amp > 0.02 * amp {
            let p_onset = (p_lo.saturating_sub(ms(fs, 100.0))..p_peak)
                .rev()
                .find(|&k| (x[k] - pr_base).abs() < ONSET_FRACTION * p_amp);
            if let Some(po) = p_onset {
                if po < onset {
                    beat.pr_ms = Some((onset - po) as f64 * 1000.0 / fs);
                }
            }
        }
    }
    beat
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

/// Quality from the share of beats that produced a measurement.
fn coverage_quality(measured: usize, beats: usize) -> Quality {
    if measured == 0 {
        Quality::Missing
    } else if 2 * measured >= beats {
        Quality::Ok
    } else {
        Quality::LowConfidence
    }
}

/// Extracts the eight default factors from a record's measurement lead.
pub fn extract_biomarkers(rec: &EcgRecord) -> Result<BiomarkerVector, BiomarkerError> {
    let lead = measurement_lead(rec).to_string();
    let peaks = detect_r_peaks(rec, &lead)
        .map_err(|e| BiomarkerError::EncodeFailure { record_id: rec.record_id.clone(), reason: e.to_string() })?;
    let x = rec.lead(&lead).expect("lead chosen from record");
    let fs = rec.sampling_rate_hz;
    let mut v = BiomarkerVector::all_missing(rec.record_id.clone(), &default_schema());

    let rr_ms: Vec<f64> = peaks.windows(2).map(|w| (w[1] - w[0]) as f64 * 1000.0 / fs).collect();
    let mean_rr = rr_ms.iter().sum::<f64>() / rr_ms.len() as f64;
    v.set(HEART_RATE, Some(60000.0 / mean_rr), Quality::Ok);
    if rr_ms.len() >= 2 {
        let sq: f64 = rr_ms.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
        v.set(RR_RMSSD, Some((sq / (rr_ms.len() - 1) as f64).sqrt()), Quality::Ok);
    }

    let mut beats = Vec::with_capacity(peaks.len());
    let mut prev_t_end = None;
    for (i, &r) in peaks.iter().enumerate() {
        let beat = delineate(x, fs, r, prev_t_end, peaks.get(i + 1).copied());
        prev_t_end = beat.t_end;
        beats.push(beat);
    }

    let nb = beats.len();
    let mut put = |name: &str, vals: Vec<f64>, positive: bool| -> Option<(f64, Quality)> {
        let vals: Vec<f64> = vals.into_iter().filter(|v| !positive || *v > 0.0).collect();
        let q = coverage_quality(vals.len(), nb);
        let m = median(vals);
        v.set(name, m, q);
        m.map(|m| (m, q))
    };
    put(PR_INTERVAL, beats.iter().filter_map(|b| b.pr_ms).collect(), true);
    put(QRS_DURATION, beats.iter().filter_map(|b| b.qrs_ms).collect(), true);
    let qt = put(QT_INTERVAL, beats.iter().filter_map(|b| b.qt_ms).collect(), true);
    put(ST_DEVIATION, beats.iter().filter_map(|b| b.st_mv).collect(), false);
    put(T_AMPLITUDE, beats.iter().filter_map(|b| b.t_amp_mv).collect(), false);

    if let Some((qt, q)) = qt {
        v.set(QTC_BAZETT, Some(qt / (mean_rr / 1000.0).sqrt()), q);
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bazett_arithmetic() {
        // 360 ms over sqrt(0.81 s) is 400 ms.
        let qtc: f64 = 360.0 / (810.0f64 / 1000.0).sqrt();
        assert!((qtc - 400.0).abs() < 1e-9);
    }

    #[test]
    fn flattest_window_prefers_latest() {
        let x = vec![0.0; 100];
        let lvl = isoelectric_level(&x, 0, 100, 20).unwrap();
        assert_eq!(lvl, 0.0);
        let mut y = vec![1.0; 60];
        y.extend(vec![0.5; 40]);
        assert_eq!(isoelectric_level(&y, 0, 100, 20).unwrap(), 0.5);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(vec![]), None);
    }

    #[test]
    fn no_peaks_is_encode_failure() {
        let rec = EcgRecord::new("z", 500.0, vec!["I".into()], vec![vec![0.0; 5000]]).unwrap();
        assert!(matches!(extract_biomarkers(&rec), Err(BiomarkerError::EncodeFailure { .. })));
    }
}
