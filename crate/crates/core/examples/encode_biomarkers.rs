//! Extracts biomarkers from synthetic waveforms and bins them by quantile.

use carex::biomarker::{discretize, extract_biomarkers, fit_discretizer};
use carex::synthetic::{generate_cases, SyntheticSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cases = generate_cases(&SyntheticSpec::default(), 60, 21)?;
    let vectors = cases.iter().map(|c| extract_biomarkers(&c.record)).collect::<Result<Vec<_>, _>>()?;

    let first = &cases[0];
    println!("{:<18} {:>10} {:>10}", "factor", "truth", "measured");
    for (factor, truth) in &first.truth.values {
        let measured = vectors[0].values.get(factor).map_or("-".to_string(), |v| format!("{v:.3}"));
        println!("{factor:<18} {truth:>10.3} {measured:>10}");
    }

    let model = fit_discretizer(&vectors, 3)?;
    let ev = discretize(&model, &vectors[0])?;
    println!("\nbins for {}:", ev.record_id);
    for (factor, label) in &ev.labels {
        println!("  {factor} = {label} (bin {})", ev.bins[factor]);
    }
    Ok(())
}
