//! Seeded synthetic ECGs drawn from a known causal model.
//!
//! Beats are templates with exactly known fiducials: a triangular QRS, a
//! raised-cosine P wave, a flat ST offset ramping into a raised-cosine T
//! wave. Heart rate is not sampled; it follows from QT and QTc through
//! Bazett's relation.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::biomarker::{
    default_schema, BiomarkerVector, DiscreteEvidence, Quality, HEART_RATE, PR_INTERVAL, QRS_DURATION, QTC_BAZETT,
    QT_INTERVAL, RR_RMSSD, ST_DEVIATION, T_AMPLITUDE,
};
use crate::causal_net::{CausalError, CausalNetwork, EdgeConstraints, LabeledEvidenceSet, LabeledRow, NodeSpec};
use crate::signal_io::{EcgRecord, RecordStore, SignalIoError};

pub const OUTCOME: &str = "diagnosis";
pub const DEFAULT_QUERY: &str = "Explain the predicted rhythm diagnosis for this ECG";

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("invalid synthetic spec: {0}")]
    SpecInvalid(String),
    #[error(transparent)]
    Causal(#[from] CausalError),
    #[error(transparent)]
    Store(#[from] SignalIoError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WaveTemplate {
    pub sampling_rate_hz: f64,
    pub duration_s: f64,
    pub first_beat_s: f64,
    pub r_amplitude_mv: f64,
    pub p_amplitude_mv: f64,
    pub p_half_width_ms: f64,
    pub t_half_width_ms: f64,
    /// Uniform per-beat jitter on wave amplitudes and ST level.
    pub jitter_mv: f64,
    pub lead_name: String,
}

impl Default for WaveTemplate {
    fn default() -> Self {
        WaveTemplate {
            sampling_rate_hz: 500.0,
            duration_s: 10.0,
            first_beat_s: 0.6,
            r_amplitude_mv: 1.5,
            p_amplitude_mv: 0.1,
            p_half_width_ms: 35.0,
            t_half_width_ms: 80.0,
            jitter_mv: 0.0,
            lead_name: "II".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Ground-truth network over the sampled factors and the outcome.
    pub network: CausalNetwork,
    /// Per-factor `[lo, hi]` value range of each bin, in bin order.
    pub ranges: IndexMap<String, Vec<[f64; 2]>>,
    /// Heart-rate bin edges used to label the derived heart rate.
    pub heart_rate_edges: Vec<f64>,
    pub template: WaveTemplate,
    pub seed: u64,
}

const LMH: [&str; 3] = ["Low", "Mid", "High"];

impl Default for SyntheticSpec {
    fn default() -> Self {
        let uniform = vec![vec![1.0 / 3.0; 3]];
        let factors = [RR_RMSSD, PR_INTERVAL, QRS_DURATION, QT_INTERVAL, QTC_BAZETT, ST_DEVIATION, T_AMPLITUDE];
        let mut nodes: Vec<NodeSpec> = factors.iter().map(|f| NodeSpec::new(*f, &LMH)).collect();
        nodes.push(NodeSpec::new(OUTCOME, &["NORM", "ARRH"]));
        let arrh = [0.02, 0.03, 0.97, 0.03, 0.05, 0.97, 0.96, 0.97, 0.99];
        let cpts = vec![
            (RR_RMSSD, vec![], uniform.clone()),
            (PR_INTERVAL, vec![], uniform.clone()),
            (QRS_DURATION, vec![], uniform.clone()),
            (QT_INTERVAL, vec![], uniform.clone()),
            (QTC_BAZETT, vec![QT_INTERVAL], vec![vec![0.85, 0.15, 0.0], vec![0.15, 0.7, 0.15], vec![0.0, 0.15, 0.85]]),
            (ST_DEVIATION, vec![], uniform.clone()),
            (T_AMPLITUDE, vec![], uniform),
            (OUTCOME, vec![RR_RMSSD, QTC_BAZETT], arrh.iter().map(|&p| vec![1.0 - p, p]).collect()),
        ];
        let network = CausalNetwork::with_cpts(nodes, cpts, OUTCOME).expect("default network is valid");
        let ranges = IndexMap::from([
            (RR_RMSSD.to_string(), vec![[10.0, 20.0], [35.0, 50.0], [70.0, 90.0]]),
            (PR_INTERVAL.to_string(), vec![[130.0, 145.0], [155.0, 170.0], [180.0, 195.0]]),
            (QRS_DURATION.to_string(), vec![[70.0, 85.0], [95.0, 110.0], [120.0, 135.0]]),
            (QT_INTERVAL.to_string(), vec![[350.0, 370.0], [380.0, 400.0], [410.0, 430.0]]),
            (QTC_BAZETT.to_string(), vec![[390.0, 410.0], [420.0, 440.0], [450.0, 470.0]]),
            (ST_DEVIATION.to_string(), vec![[-0.12, -0.06], [-0.02, 0.02], [0.06, 0.12]]),
            (T_AMPLITUDE.to_string(), vec![[0.2, 0.3], [0.4, 0.5], [0.6, 0.7]]),
        ]);
        SyntheticSpec {
            network,
            ranges,
            heart_rate_edges: vec![71.2, 74.8],
            template: WaveTemplate::default(),
            seed: 42,
        }
    }
}

const WAVE_FACTORS: [&str; 7] =
    [RR_RMSSD, PR_INTERVAL, QRS_DURATION, QT_INTERVAL, QTC_BAZETT, ST_DEVIATION, T_AMPLITUDE];

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), SyntheticError> {
        self.network.validate()?;
        let bad = |m: String| Err(SyntheticError::SpecInvalid(m));
        for f in WAVE_FACTORS {
            let Some(r) = self.ranges.get(f) else {
                return bad(format!("no value ranges for {f}"));
            };
            let node =
                self.network.node(f).map_err(|_| SyntheticError::SpecInvalid(format!("{f} missing from network")))?;
            if r.len() != node.cardinality() {
                return bad(format!("{f}: {} ranges for {} bins", r.len(), node.cardinality()));
            }
            for (i, [lo, hi]) in r.iter().enumerate() {
                if !(lo <= hi) {
                    return bad(format!("{f}: range {i} is empty"));
                }
                if i > 0 && !(r[i - 1][1] < *lo) {
                    return bad(format!("{f}: ranges {} and {i} overlap or are unordered", i - 1));
                }
            }
        }
        if self.network.node(HEART_RATE).is_ok() {
            return bad("heart rate is derived and cannot be a network node".into());
        }
        if !self.heart_rate_edges.windows(2).all(|w| w[0] < w[1]) {
            return bad("heart rate edges must increase".into());
        }
        let t = &self.template;
        if !(t.sampling_rate_hz >= 100.0 && t.duration_s > t.first_beat_s && t.first_beat_s >= 0.35) {
            return bad("template timing out of range".into());
        }
        if !(t.r_amplitude_mv > 0.0 && t.p_half_width_ms > 0.0 && t.t_half_width_ms > 0.0 && t.jitter_mv >= 0.0) {
            return bad("template shape out of range".into());
        }
        Ok(())
    }

    pub fn heart_rate_bin(&self, hr: f64) -> usize {
        1 + self.heart_rate_edges.iter().filter(|&&e| e <= hr).count()
    }

    pub fn load(path: &Path) -> Result<Self, SyntheticError> {
        let text = std::fs::read_to_string(path).map_err(|source| SyntheticError::Io { path: path.into(), source })?;
        let spec: SyntheticSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCase {
    pub record: EcgRecord,
    /// Ground-truth bins for the sampled factors plus heart rate.
    pub evidence: DiscreteEvidence,
    pub outcome: String,
    pub truth: BiomarkerVector,
}

fn sample_categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Ancestral sample of every network node (0-based states, node order).
fn sample_states(net: &CausalNetwork, rng: &mut ChaCha8Rng) -> Result<Vec<usize>, SyntheticError> {
    let mut states = vec![0usize; net.nodes.len()];
    for v in net.topological_order()? {
        let name = &net.nodes[v].name;
        let cpt = &net.cpts[name];
        let mut row = 0;
        for p in &cpt.parents {
            let pi = net.node_index(p).expect("validated");
            row = row * net.nodes[pi].cardinality() + states[pi];
        }
        states[v] = sample_categorical(rng, &cpt.table[row]);
    }
    Ok(states)
}

/// `n` labeled rows sampled from the ground-truth network alone.
pub fn sample_labeled(spec: &SyntheticSpec, n: usize, seed: u64) -> Result<LabeledEvidenceSet, SyntheticError> {
    let net = &spec.network;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let states = sample_states(net, &mut rng)?;
        let mut ev = DiscreteEvidence::new(format!("row-{i:05}"));
        let mut outcome = String::new();
        for (node, &s) in net.nodes.iter().zip(&states) {
            if node.name == net.outcome {
                outcome = node.states[s].clone();
            } else {
                ev = ev.with(&node.name, s + 1, &node.states[s]);
            }
        }
        rows.push(LabeledRow { evidence: ev, outcome });
    }
    let mut nodes: Vec<NodeSpec> = net.nodes.iter().filter(|n| n.name != net.outcome).cloned().collect();
    nodes.push(net.outcome_node().clone());
    Ok(LabeledEvidenceSet::new(nodes, net.outcome.clone(), rows)?)
}

/// Per-case seed derived from a dataset seed (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct BeatShape {
    r_ms: f64,
    qrs: f64,
    pr: f64,
    qt: f64,
    st: f64,
    t_amp: f64,
    p_amp: f64,
    r_amp: f64,
}

pub fn sample_case(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticCase, SyntheticError> {
    sample_case_with_id(spec, seed, &format!("syn-{seed:016x}"))
}

pub fn sample_case_with_id(spec: &SyntheticSpec, seed: u64, record_id: &str) -> Result<SyntheticCase, SyntheticError> {
    let net = &spec.network;
    let tpl = &spec.template;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states = sample_states(net, &mut rng)?;

    let mut evidence = DiscreteEvidence::new(record_id);
    let mut values: IndexMap<&str, f64> = IndexMap::new();
    let mut outcome = String::new();
    for (node, &s) in net.nodes.iter().zip(&states) {
        if node.name == net.outcome {
            outcome = node.states[s].clone();
            continue;
        }
        evidence = evidence.with(&node.name, s + 1, &node.states[s]);
        if let Some(r) = spec.ranges.get(&node.name) {
            let [lo, hi] = r[s];
            values.insert(node.name.as_str(), if hi > lo { rng.random_range(lo..=hi) } else { lo });
        }
    }
    let get = |f: &str| values.get(f).copied().ok_or_else(|| SyntheticError::SpecInvalid(format!("{f} not sampled")));
    let (rmssd, pr, qrs, qt, qtc, st, t_amp) = (
        get(RR_RMSSD)?,
        get(PR_INTERVAL)?,
        get(QRS_DURATION)?,
        get(QT_INTERVAL)?,
        get(QTC_BAZETT)?,
        get(ST_DEVIATION)?,
        get(T_AMPLITUDE)?,
    );
    let rr = 1000.0 * (qt / qtc).powi(2);
    let hr = 60000.0 / rr;
    let hr_bin = spec.heart_rate_bin(hr);
    let hr_label = crate::biomarker::default_bin_labels(spec.heart_rate_edges.len() + 1)[hr_bin - 1].clone();
    evidence = evidence.with(HEART_RATE, hr_bin, &hr_label);

    // Even number of alternating intervals keeps the mean RR exact.
    let fs = tpl.sampling_rate_hz;
    let duration_ms = tpl.duration_s * 1000.0;
    let t0 = tpl.first_beat_s * 1000.0;
    let tail = qt + tpl.t_half_width_ms + 100.0;
    let mut n_int = ((duration_ms - t0 - tail) / rr).floor() as i64;
    n_int -= n_int.rem_euclid(2);
    if n_int < 2 {
        return Err(SyntheticError::SpecInvalid(format!("RR {rr:.0} ms leaves fewer than 3 beats")));
    }
    let mut r_times = vec![t0];
    for j in 0..n_int {
        let step = if j % 2 == 0 { rr + rmssd / 2.0 } else { rr - rmssd / 2.0 };
        r_times.push(r_times[r_times.len() - 1] + step);
    }
    let jitter = |rng: &mut ChaCha8Rng| {
        if tpl.jitter_mv > 0.0 {
            rng.random_range(-tpl.jitter_mv..=tpl.jitter_mv)
        } else {
            0.0
        }
    };
    let beats: Vec<BeatShape> = r_times
        .iter()
        .map(|&t| BeatShape {
            r_ms: (t * fs / 1000.0).round() * 1000.0 / fs,
            qrs,
            pr,
            qt,
            st: st + jitter(&mut rng),
            t_amp: t_amp + jitter(&mut rng),
            p_amp: tpl.p_amplitude_mv + jitter(&mut rng),
            r_amp: tpl.r_amplitude_mv + jitter(&mut rng),
        })
        .collect();

    let p_peak_frac = (-0.8f64).acos() / PI;
    let t_end_frac = (-0.9f64).acos() / PI;
    let (hp, ht) = (tpl.p_half_width_ms, tpl.t_half_width_ms);
    for w in beats.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let t_done = a.r_ms - a.qrs / 2.0 + a.qt - t_end_frac * ht + ht;
        let next_p = b.r_ms - b.qrs / 2.0 - b.pr + p_peak_frac * hp - hp;
        if t_done >= next_p {
            return Err(SyntheticError::SpecInvalid(format!(
                "T wave overlaps the next P wave (RR {rr:.0} ms, QT {qt:.0} ms, PR {pr:.0} ms)"
            )));
        }
    }

    let n = (duration_ms * fs / 1000.0).round() as usize;
    let mut x = vec![0.0; n];
    let dt = 1000.0 / fs;
    for b in &beats {
        let s = b.qrs / 1.8;
        let onset = b.r_ms - b.qrs / 2.0;
        let p_peak = onset - b.pr + p_peak_frac * hp;
        let t_peak = onset + b.qt - t_end_frac * ht;
        let t_start = t_peak - ht;
        let lo = ((p_peak - hp) / dt).floor().max(0.0) as usize;
        let hi = (((t_peak + ht) / dt).ceil() as usize + 1).min(n);
        for (k, xk) in x.iter_mut().enumerate().take(hi).skip(lo) {
            let t = k as f64 * dt;
            let mut v = 0.0;
            if (t - p_peak).abs() <= hp {
                v += b.p_amp * (1.0 + (PI * (t - p_peak) / hp).cos()) / 2.0;
            }
            if (t - b.r_ms).abs() < s {
                v += b.r_amp * (1.0 - (t - b.r_ms).abs() / s);
            }
            if t >= b.r_ms + s && t < t_start {
                v += b.st;
            } else if t >= t_start && t <= t_peak && t >= b.r_ms + s {
                v += b.st * (1.0 + (PI * (t - t_start) / ht).cos()) / 2.0;
            }
            if (t - t_peak).abs() <= ht {
                v += b.t_amp * (1.0 + (PI * (t - t_peak) / ht).cos()) / 2.0;
            }
            *xk += v;
        }
    }

    let record = EcgRecord::new(record_id, fs, vec![tpl.lead_name.clone()], vec![x])?;
    let mut truth = BiomarkerVector::all_missing(record_id, &default_schema());
    for (f, v) in [
        (HEART_RATE, hr),
        (RR_RMSSD, rmssd),
        (PR_INTERVAL, pr),
        (QRS_DURATION, qrs),
        (QT_INTERVAL, qt),
        (QTC_BAZETT, qtc),
        (ST_DEVIATION, st),
        (T_AMPLITUDE, t_amp),
    ] {
        truth.set(f, Some(v), Quality::Ok);
    }
    Ok(SyntheticCase { record, evidence, outcome, truth })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub record_id: String,
    pub query: String,
    pub gold_labels: Vec<String>,
    pub gold_evidence: IndexMap<String, usize>,
    pub truth: IndexMap<String, f64>,
}

pub fn case_id(index: usize) -> String {
    format!("syn-{index:04}")
}

/// Samples `n` cases, stores their records and returns the manifest rows.
pub fn generate_cases(spec: &SyntheticSpec, n: usize, seed: u64) -> Result<Vec<SyntheticCase>, SyntheticError> {
    spec.validate()?;
    (0..n).map(|i| sample_case_with_id(spec, derive_seed(seed, i as u64), &case_id(i))).collect()
}

pub fn manifest_row(case: &SyntheticCase) -> ManifestRow {
    ManifestRow {
        record_id: case.record.record_id.clone(),
        query: DEFAULT_QUERY.to_string(),
        gold_labels: vec![case.outcome.clone()],
        gold_evidence: case.evidence.bins.clone(),
        truth: case.truth.values.clone(),
    }
}

/// Writes `n` cases into `store` and a JSON Lines manifest at `manifest`.
pub fn generate_dataset(
    spec: &SyntheticSpec,
    n: usize,
    seed: u64,
    store: &mut RecordStore,
    manifest: &Path,
) -> Result<Vec<ManifestRow>, SyntheticError> {
    let cases = generate_cases(spec, n, seed)?;
    let io = |source| SyntheticError::Io { path: manifest.to_path_buf(), source };
    let mut out = std::io::BufWriter::new(std::fs::File::create(manifest).map_err(io)?);
    let mut rows = Vec::with_capacity(n);
    for case in &cases {
        store.store_record(&case.record)?;
        let row = manifest_row(case);
        serde_json::to_writer(&mut out, &row)?;
        out.write_all(b"\n").map_err(io)?;
        rows.push(row);
    }
    out.flush().map_err(io)?;
    Ok(rows)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>, SyntheticError> {
    let text = std::fs::read_to_string(path).map_err(|source| SyntheticError::Io { path: path.into(), source })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(SyntheticError::from))
        .collect()
}

/// The default spec's true edges.
pub fn default_true_edges() -> Vec<(String, String)> {
    SyntheticSpec::default().network.edges
}

/// Prior constraints matching the default spec's ordering.
pub fn default_constraints(spec: &SyntheticSpec) -> EdgeConstraints {
    let mut ordering: Vec<String> =
        spec.network.nodes.iter().map(|n| n.name.clone()).filter(|n| n != &spec.network.outcome).collect();
    ordering.push(spec.network.outcome.clone());
    EdgeConstraints { ordering, ..Default::default() }
}
