//! Posterior, what-if edits and minimal counterfactuals on the reference network.

use carex::causal_net::infer_posterior;
use carex::counterfactual::{find_counterfactual, whatif};
use carex::synthetic::{sample_labeled, SyntheticSpec};
use indexmap::IndexMap;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SyntheticSpec::default();
    let net = &spec.network;
    let rows = sample_labeled(&spec, 20, 8)?.rows;

    for row in rows.iter().take(5) {
        let post = infer_posterior(net, &row.evidence, &net.outcome)?;
        let pred = post.argmax().to_string();
        let target = net.outcome_node().states.iter().find(|s| **s != pred).unwrap().clone();
        let cf = find_counterfactual(net, &row.evidence, &target, 2)?;
        println!("{}: predicted {pred} ({:.3}), target {target}", row.evidence.record_id, post.prob(&pred));
        if cf.achieved {
            for e in &cf.edits {
                println!("  set {} {} -> {}", e.factor, e.from_label, e.to_label);
            }
            println!("  P({target}) after edit = {:.3}", cf.posterior_after.prob(&target));
        } else {
            println!("  no flip within 2 edits");
        }
    }

    let row = &rows[0];
    let factor = row.evidence.bins.keys().next().unwrap().clone();
    let overrides: IndexMap<String, usize> = [(factor.clone(), 1)].into_iter().collect();
    let edited = whatif(net, &row.evidence, &overrides)?;
    println!("\nwhat-if {factor}=bin 1: {}", serde_json::to_string(&edited.probs)?);
    Ok(())
}
