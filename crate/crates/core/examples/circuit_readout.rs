//! Circuit readout for one test digit and for its optimized explanation.
//!
//! cargo run --example circuit_readout -- <model.amxw> [data dir] [index] [k]

use actmatch::circuit::{build_circuit, mean_dropped_energy, CircuitGraph};
use actmatch::data::{normalize, MnistDir};
use actmatch::explain::{optimize_explanation, ExplainConfig};
use actmatch::nn::ModelBundle;

fn show(name: &str, g: &CircuitGraph, dropped: &[f64]) {
    println!("{name}: class {} conf {:.4}, {} nodes, {} edges", g.meta.class, g.meta.confidence, g.nodes.len(), g.edges.len());
    for (layer, dropped) in dropped.iter().enumerate() {
        let mut nodes: Vec<_> = g.nodes_in_layer(layer).collect();
        nodes.sort_by(|a, b| b.energy.total_cmp(&a.energy));
        let top: Vec<String> = nodes.iter().take(4).map(|n| format!("c{}={:.2}", n.channel, n.energy)).collect();
        println!("  conv{layer}: {} (mean dropped energy {:.3})", top.join(" "), dropped);
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let model = args.first().ok_or("usage: circuit_readout <model.amxw> [data dir] [index] [k]")?;
    let data = args.get(1).map_or("data/mnist", String::as_str);
    let index: usize = args.get(2).map_or(Ok(0), |s| s.parse())?;
    let k: usize = args.get(3).map_or(Ok(8), |s| s.parse())?;
    let bundle = ModelBundle::load(model)?;
    let x = normalize(&MnistDir(data.into()).test()?.image(index));

    let gx = build_circuit(&bundle, &x, k, "original")?;
    show("original", &gx, &mean_dropped_energy(&bundle, &x, &gx)?);

    let r = optimize_explanation(&bundle, &x, &ExplainConfig::default())?;
    let e = r.explanation.clone();
    let ge = build_circuit(&bundle, &e, k, "explanation")?;
    show("explanation", &ge, &mean_dropped_energy(&bundle, &e, &ge)?);

    let shared = gx.nodes.iter().filter(|n| ge.node(n.layer, n.channel).is_some()).count();
    println!("{shared} of {} nodes shared, active {:.2}%", gx.nodes.len(), 100.0 * r.summary.active_fraction);
    Ok(())
}
