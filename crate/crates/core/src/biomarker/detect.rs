//! R-peak detection: five-point derivative, squaring, moving-window
//! integration and an adaptive half-maximum threshold.

use std::collections::VecDeque;

use super::BiomarkerError;
use crate::signal_io::EcgRecord;

const INTEGRATION_WINDOW_S: f64 = 0.150;
const THRESHOLD_WINDOW_S: f64 = 2.0;
const THRESHOLD_FRACTION: f64 = 0.5;
const SEARCH_HALF_WIDTH_S: f64 = 0.050;
const REFRACTORY_S: f64 = 0.200;

fn samples(seconds: f64, fs: f64) -> usize {
    (seconds * fs).round().max(1.0) as usize
}

/// Moving-window integration of the squared five-point derivative.
fn integrated_energy(x: &[f64], fs: f64) -> Vec<f64> {
    let n = x.len();
    let mut energy = vec![0.0; n];
    for i in 4..n {
        let d = (2.0 * x[i] + x[i - 1] - x[i - 3] - 2.0 * x[i - 4]) / 8.0;
        energy[i] = d * d;
    }
    let w = samples(INTEGRATION_WINDOW_S, fs);
    let mut out = vec![0.0; n];
    let mut acc = 0.0;
    for i in 0..n {
        acc += energy[i];
        if i >= w {
            acc -= energy[i - w];
        }
        out[i] = acc.max(0.0) / w as f64;
    }
    out
}

/// Threshold at each sample: half the maximum of the integrated signal over
/// the trailing window. Samples inside the first window share the maximum of
/// that window (learning phase).
fn adaptive_threshold(integ: &[f64], fs: f64) -> Vec<f64> {
    let n = integ.len();
    let w = samples(THRESHOLD_WINDOW_S, fs);
    let learn_max = integ[..w.min(n)].iter().copied().fold(0.0, f64::max);
    let mut thr = vec![THRESHOLD_FRACTION * learn_max; n];
    let mut dq: VecDeque<usize> = VecDeque::new();
    for i in 0..n {
        while dq.back().is_some_and(|&j| integ[j] <= integ[i]) {
            dq.pop_back();
        }
        dq.push_back(i);
        while dq.front().is_some_and(|&j| j + w < i) {
            dq.pop_front();
        }
        if i >= w {
            thr[i] = THRESHOLD_FRACTION * integ[dq[0]];
        }
    }
    thr
}

/// Detects R peaks on a single lead sampled at `fs` Hz.
///
/// Each supra-threshold run of the integrated signal yields one candidate:
/// the raw maximum within 50 ms either side of the run. Candidates closer
/// than the 200 ms refractory period keep the taller one.
pub fn detect_peaks(x: &[f64], fs: f64) -> Vec<usize> {
    let n = x.len();
    if n < 5 {
        return Vec::new();
    }
    let integ = integrated_energy(x, fs);
    let thr = adaptive_threshold(&integ, fs);
    let half = samples(SEARCH_HALF_WIDTH_S, fs);
    let refractory = samples(REFRACTORY_S, fs);

    let mut candidates = Vec::new();
    let mut i = 0;
    while i < n {
        if thr[i] > 0.0 && integ[i] > thr[i] {
            let start = i;
            while i + 1 < n && integ[i + 1] > thr[i + 1] {
                i += 1;
            }
            let lo = start.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            let mut best = lo;
            for k in lo..=hi {
                if x[k] > x[best] {
                    best = k;
                }
            }
            candidates.push(best);
        }
        i += 1;
    }
    candidates.sort_unstable();
    candidates.dedup();

    let mut peaks: Vec<usize> = Vec::with_capacity(candidates.len());
    for c in candidates {
        match peaks.last_mut() {
            Some(last) if c - *last < refractory => {
                if x[c] > x[*last] {
                    *last = c;
                }
            }
            _ => peaks.push(c),
        }
    }
    peaks
}

/// Detects R peaks on the named lead of a record.
pub fn detect_r_peaks(rec: &EcgRecord, lead: &str) -> Result<Vec<usize>, BiomarkerError> {
    let x = rec.lead(lead).ok_or_else(|| BiomarkerError::LeadNotFound(lead.to_string()))?;
    let peaks = detect_peaks(x, rec.sampling_rate_hz);
    if peaks.len() < 2 {
        return Err(BiomarkerError::NoPeaks { lead: lead.to_string(), found: peaks.len() });
    }
    Ok(peaks)
}
