//! Minimality of optimized masks against thresholded Grad-CAM on a few digits.
//!
//! cargo run --example gradcam_comparison -- <model.amxw> [data dir] [count]

use actmatch::compare::compare_images;
use actmatch::data::{sample_indices, MnistDir};
use actmatch::explain::ExplainConfig;
use actmatch::nn::ModelBundle;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let model = args.first().ok_or("usage: gradcam_comparison <model.amxw> [data dir] [count]")?;
    let data = args.get(1).map_or("data/mnist", String::as_str);
    let count: usize = args.get(2).map_or(Ok(5), |s| s.parse())?;
    let bundle = ModelBundle::load(model)?;
    let test = MnistDir(data.into()).test()?;
    let images: Vec<_> = sample_indices(test.len(), count, 0).into_iter().map(|i| (format!("test:{i}"), test.image(i))).collect();
    let report = compare_images(&bundle, &images, &ExplainConfig::default())?;
    println!("{:<12} {:>6} {:>10} {:>10} {:>9}", "input", "label", "optimized", "grad-cam", "kept");
    for r in &report.rows {
        println!(
            "{:<12} {:>6} {:>9.2}% {:>9.2}% {:>9}",
            r.input_id,
            r.label,
            100.0 * r.ours_active_fraction,
            100.0 * r.gradcam_fraction_at_fidelity,
            r.label_preserved
        );
    }
    let m = &report.medians;
    println!(
        "median: optimized {:.2}%, grad-cam ({}) {:.2}%",
        100.0 * m.ours_active_fraction,
        report.gradcam_layer,
        100.0 * m.gradcam_fraction_at_fidelity
    );
    Ok(())
}
