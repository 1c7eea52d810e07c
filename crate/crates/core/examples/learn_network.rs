//! Recovers the ground-truth structure from sampled rows with the K2 score.

use std::collections::BTreeSet;

use carex::causal_net::{fit_cpts, learn_structure};
use carex::synthetic::{default_constraints, sample_labeled, SyntheticSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SyntheticSpec::default();
    let data = sample_labeled(&spec, 5000, 42)?;
    let net = learn_structure(&data, &default_constraints(&spec), 3)?;
    let net = fit_cpts(&net, &data, 1.0)?;

    let truth: BTreeSet<_> = spec.network.edges.iter().cloned().collect();
    let learned: BTreeSet<_> = net.edges.iter().cloned().collect();
    for (a, b) in &learned {
        let mark = if truth.contains(&(a.clone(), b.clone())) { "ok" } else { "extra" };
        println!("{a} -> {b} [{mark}]");
    }
    for (a, b) in truth.difference(&learned) {
        println!("{a} -> {b} [missing]");
    }
    println!("structural differences: {}", truth.symmetric_difference(&learned).count());
    println!("outcome CPT rows: {}", net.cpts[&net.outcome].table.len());
    Ok(())
}
