//! Ranks causal drivers and uses them to enrich a fact-retrieval query.

use carex::causal_net::{infer_posterior, rank_contributions};
use carex::knowledge::{build_index, enrich_query, retrieve};
use carex::pipeline::demo_corpus;
use carex::synthetic::{sample_labeled, SyntheticSpec, DEFAULT_QUERY};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SyntheticSpec::default();
    let net = &spec.network;
    let row = sample_labeled(&spec, 1, 5)?.rows.remove(0);
    let ev = row.evidence;

    let post = infer_posterior(net, &ev, &net.outcome)?;
    let drivers = rank_contributions(net, &ev, &net.outcome)?;
    println!("prediction: {}", post.argmax());
    for c in drivers.top(3) {
        println!("  driver {} = {} (shift {:.4})", c.factor, ev.labels[&c.factor], c.score);
    }

    let index = build_index(&demo_corpus())?;
    for top_m in [0, 3] {
        let q = enrich_query(DEFAULT_QUERY, &drivers, &ev, post.argmax(), top_m);
        println!("\nquery (top_m={top_m}): {q}");
        for hit in retrieve(&index, &q, 3).hits {
            println!("  {:.3} [{}] {}", hit.score, hit.doc.fact_id, hit.doc.text);
        }
    }
    Ok(())
}
