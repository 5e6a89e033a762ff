//! Optimizes binary masks for a few MNIST test digits and prints the summary.
//!
//! cargo run --example explain_digit -- <model.amxw> [data dir] [count] [steps]

use std::time::Instant;

use actmatch::data::{normalize, MnistDir};
use actmatch::explain::{optimize_explanation, ExplainConfig};
use actmatch::nn::ModelBundle;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let model = args.first().ok_or("usage: explain_digit <model.amxw> [data dir] [count] [steps]")?;
    let data = args.get(1).map_or("data/mnist", String::as_str);
    let count: usize = args.get(2).map_or(Ok(3), |s| s.parse())?;
    let mut cfg = ExplainConfig::default();
    if let Some(s) = args.get(3) {
        cfg.steps = s.parse()?;
    }
    let bundle = ModelBundle::load(model)?;
    let test = MnistDir(data.into()).test()?;
    for i in 0..count {
        let x = normalize(&test.image(i));
        let start = Instant::now();
        let r = optimize_explanation(&bundle, &x, &cfg)?;
        let s = &r.summary;
        println!(
            "digit {i} (label {}): y={} conf {:.3} -> {:.3}, active {:.2}%, preserved {}, robust {:.2}, {:.1}s",
            test.label(i),
            s.label,
            s.original_confidence,
            s.explanation_confidence,
            100.0 * s.active_fraction,
            s.label_preserved,
            s.robustness_success_rate,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
