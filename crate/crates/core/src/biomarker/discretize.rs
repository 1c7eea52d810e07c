//! K-bin quantile discretization.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{BiomarkerError, BiomarkerVector, Quality};

pub fn default_bin_labels(k: usize) -> Vec<String> {
    match k {
        2 => vec!["Low".into(), "High".into()],
        3 => vec!["Low".into(), "Mid".into(), "High".into()],
        _ => (1..=k).map(|i| format!("Bin{i}")).collect(),
    }
}

/// Fitted cut points per factor.
///
/// A factor with no cut points is degenerate (constant in the fitting data)
/// and is left out of discretized evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizerModel {
    pub num_bins: usize,
    pub bin_labels: Vec<String>,
    pub cut_points: IndexMap<String, Vec<f64>>,
}

/// Discretized evidence; bins are 1-based.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscreteEvidence {
    pub record_id: String,
    pub bins: IndexMap<String, usize>,
    pub labels: IndexMap<String, String>,
}

impl DiscreteEvidence {
    pub fn new(record_id: impl Into<String>) -> Self {
        DiscreteEvidence { record_id: record_id.into(), ..Default::default() }
    }

    pub fn with(mut self, factor: &str, bin: usize, label: &str) -> Self {
        self.bins.insert(factor.to_string(), bin);
        self.labels.insert(factor.to_string(), label.to_string());
        self
    }
}

/// Empirical quantile at `p` by linear interpolation between order
/// statistics (the `(n - 1) p` rule).
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < sorted.len() {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    }
}

impl DiscretizerModel {
    pub fn factors(&self) -> impl Iterator<Item = &str> {
        self.cut_points.keys().map(String::as_str)
    }

    pub fn is_degenerate(&self, factor: &str) -> bool {
        self.cut_points.get(factor).is_some_and(Vec::is_empty)
    }

    /// Number of bins actually used by a factor.
    pub fn bins_for(&self, factor: &str) -> Option<usize> {
        self.cut_points.get(factor).map(|c| c.len() + 1)
    }

    pub fn labels_for(&self, factor: &str) -> Option<Vec<String>> {
        let m = self.bins_for(factor)?;
        Some(if m == self.num_bins { self.bin_labels.clone() } else { (1..=m).map(|i| format!("Bin{i}")).collect() })
    }

    /// 1 + number of cut points strictly below `value`; ties go low.
    pub fn bin_of(&self, factor: &str, value: f64) -> Option<usize> {
        let cuts = self.cut_points.get(factor)?;
        Some(1 + cuts.iter().filter(|&&c| c < value).count())
    }
}

/// Fits quantile cut points at `j / k` for every factor of the schema.
pub fn fit_discretizer(vectors: &[BiomarkerVector], k: usize) -> Result<DiscretizerModel, BiomarkerError> {
    fit_discretizer_with_labels(vectors, k, default_bin_labels(k))
}

pub fn fit_discretizer_with_labels(
    vectors: &[BiomarkerVector],
    k: usize,
    bin_labels: Vec<String>,
) -> Result<DiscretizerModel, BiomarkerError> {
    if k < 2 {
        return Err(BiomarkerError::InvalidBins(k));
    }
    if bin_labels.len() != k {
        return Err(BiomarkerError::SchemaMismatch(format!("{} bin labels for {k} bins", bin_labels.len())));
    }
    let Some(first) = vectors.first() else {
        return Err(BiomarkerError::InsufficientData { factor: "*".into(), available: 0, required: k });
    };
    let schema: Vec<String> = first.schema().map(str::to_string).collect();
    for v in vectors {
        if v.quality.len() != schema.len() || !schema.iter().all(|f| v.quality.contains_key(f)) {
            return Err(BiomarkerError::SchemaMismatch(format!(
                "{} does not share the factor schema of {}",
                v.record_id, first.record_id
            )));
        }
    }

    let mut cut_points = IndexMap::new();
    for factor in &schema {
        let mut vals: Vec<f64> = vectors
            .iter()
            .filter(|v| v.quality.get(factor) == Some(&Quality::Ok))
            .filter_map(|v| v.values.get(factor).copied())
            .collect();
        vals.sort_by(f64::total_cmp);
        let insufficient =
            || BiomarkerError::InsufficientData { factor: factor.clone(), available: vals.len(), required: k };
        if vals.is_empty() {
            return Err(insufficient());
        }
        if vals[0] == vals[vals.len() - 1] {
            tracing::warn!(factor = %factor, "constant factor collapses to a single bin");
            cut_points.insert(factor.clone(), Vec::new());
            continue;
        }
        if vals.len() < k {
            return Err(insufficient());
        }
        let mut cuts: Vec<f64> = (1..k).map(|j| quantile_sorted(&vals, j as f64 / k as f64)).collect();
        cuts.dedup();
        cut_points.insert(factor.clone(), cuts);
    }
    Ok(DiscretizerModel { num_bins: k, bin_labels, cut_points })
}

/// Bins every non-missing, non-degenerate factor of `v`.
pub fn discretize(model: &DiscretizerModel, v: &BiomarkerVector) -> Result<DiscreteEvidence, BiomarkerError> {
    if v.quality.len() != model.cut_points.len() || !model.cut_points.keys().all(|f| v.quality.contains_key(f)) {
        return Err(BiomarkerError::SchemaMismatch(format!("{} does not match the discretizer schema", v.record_id)));
    }
    let mut ev = DiscreteEvidence::new(v.record_id.clone());
    for (factor, cuts) in &model.cut_points {
        if cuts.is_empty() || v.quality[factor] == Quality::Missing {
            continue;
        }
        let Some(&value) = v.values.get(factor) else {
            continue;
        };
        let bin = model.bin_of(factor, value).expect("factor in model");
        let labels = model.labels_for(factor).expect("factor in model");
        ev.bins.insert(factor.clone(), bin);
        ev.labels.insert(factor.clone(), labels[bin - 1].clone());
    }
    Ok(ev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vectors(factor: &str, vals: &[f64]) -> Vec<BiomarkerVector> {
        vals.iter()
            .enumerate()
            .map(|(i, &x)| {
                let mut v = BiomarkerVector::all_missing(format!("r{i}"), &[factor.to_string()]);
                v.set(factor, Some(x), Quality::Ok);
                v
            })
            .collect()
    }

    /// Independent reference: numpy's default "linear" quantile.
    fn reference_quantile(vals: &[f64], p: f64) -> f64 {
        let mut s = vals.to_vec();
        s.sort_by(f64::total_cmp);
        let pos = p * (s.len() as f64 - 1.0);
        let below = pos.floor();
        let above = pos.ceil();
        let lo = s[below as usize];
        let hi = s[above as usize];
        lo * (above - pos) + hi * (pos - below) + if above == below { lo } else { 0.0 }
    }

    #[test]
    fn one_to_nine_terciles() {
        let vals: Vec<f64> = (1..=9).map(f64::from).collect();
        let m = fit_discretizer(&vectors("f", &vals), 3).unwrap();
        let cuts = &m.cut_points["f"];
        assert!((cuts[0] - reference_quantile(&vals, 1.0 / 3.0)).abs() < 1e-12);
        assert!((cuts[1] - reference_quantile(&vals, 2.0 / 3.0)).abs() < 1e-12);
        assert!((cuts[0] - 11.0 / 3.0).abs() < 1e-12);
        assert!((cuts[1] - 19.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.bin_labels, vec!["Low", "Mid", "High"]);
    }

    #[test]
    fn constant_factor_degenerates() {
        let m = fit_discretizer(&vectors("f", &[5.0; 10]), 3).unwrap();
        assert!(m.is_degenerate("f"));
        assert_eq!(m.bins_for("f"), Some(1));
        let ev = discretize(&m, &vectors("f", &[5.0])[0]).unwrap();
        assert!(ev.bins.is_empty());
    }

    #[test]
    fn too_few_values() {
        assert!(matches!(
            fit_discretizer(&vectors("f", &[1.0, 2.0]), 3),
            Err(BiomarkerError::InsufficientData { factor, available: 2, .. }) if factor == "f"
        ));
    }

    #[test]
    fn boundary_tie_goes_low() {
        let m = DiscretizerModel {
            num_bins: 3,
            bin_labels: default_bin_labels(3),
            cut_points: [("f".to_string(), vec![3.67, 6.33])].into_iter().collect(),
        };
        let ev = discretize(&m, &vectors("f", &[6.33])[0]).unwrap();
        assert_eq!(ev.bins["f"], 2);
        assert_eq!(ev.labels["f"], "Mid");
        assert_eq!(discretize(&m, &vectors("f", &[100.0])[0]).unwrap().bins["f"], 3);
        let low = discretize(&m, &vectors("f", &[-1.0])[0]).unwrap();
        assert_eq!((low.bins["f"], low.labels["f"].as_str()), (1, "Low"));
    }

    #[test]
    fn missing_factors_omitted_and_schema_checked() {
        let m = fit_discretizer(&vectors("f", &[1.0, 2.0, 3.0, 4.0]), 2).unwrap();
        let v = BiomarkerVector::all_missing("x", &["f".to_string()]);
        assert!(discretize(&m, &v).unwrap().bins.is_empty());
        let other = BiomarkerVector::all_missing("y", &["g".to_string()]);
        assert!(matches!(discretize(&m, &other), Err(BiomarkerError::SchemaMismatch(_))));
    }

    #[test]
    fn model_json_round_trip() {
        let m = fit_discretizer(&vectors("f", &[1.0, 2.0, 3.0, 4.0, 5.0]), 3).unwrap();
        let back: DiscretizerModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #[test]
        fn balanced_bins_on_distinct_values(n in 3usize..200, k in 2usize..6, seed in 0u64..1000) {
            prop_assume!(n >= k);
            // Distinct values in shuffled order.
            let vals: Vec<f64> = (0..n).map(|i| ((i as u64 * 7919 + seed) % 100_003) as f64 + i as f64 * 1e-3).collect();
            let mut uniq = vals.clone();
            uniq.sort_by(f64::total_cmp);
            uniq.dedup();
            prop_assume!(uniq.len() == n);
            let vs = vectors("f", &vals);
            let m = fit_discretizer(&vs, k).unwrap();
            let mut counts = vec![0usize; k];
            for v in &vs {
                counts[discretize(&m, v).unwrap().bins["f"] - 1] += 1;
            }
            let (lo, hi) = (n / k, n.div_ceil(k));
            for c in counts {
                prop_assert!(c >= lo && c <= hi, "count {} outside [{}, {}]", c, lo, hi);
            }
        }

        #[test]
        fn discretization_is_monotone(a in -1e3f64..1e3, b in -1e3f64..1e3) {
            let m = fit_discretizer(&vectors("f", &[-500.0, -10.0, 0.0, 10.0, 500.0]), 3).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(m.bin_of("f", lo).unwrap() <= m.bin_of("f", hi).unwrap());
        }
    }
}
