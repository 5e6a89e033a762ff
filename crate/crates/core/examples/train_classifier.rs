//! Train the three-block MNIST classifier and save it as an AMXW weight file.
//!
//! ```text
//! cargo run --release --example train_classifier -- [data/mnist] [model.amxw] [epochs]
//! ```

use std::time::Instant;

use actmatch::data::MnistDir;
use actmatch::nn::{train_classifier, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "data/mnist".into());
    let out = args.next().unwrap_or_else(|| "model.amxw".into());
    let epochs = args.next().map(|s| s.parse()).transpose()?.unwrap_or(3);

    let mnist = MnistDir(dir.into());
    let (train, test) = (mnist.train()?, mnist.test()?);
    println!("train {} / test {} images", train.len(), test.len());

    let cfg = TrainConfig { epochs, ..TrainConfig::default() };
    let start = Instant::now();
    let (bundle, report) = train_classifier(&train, &test, &cfg)?;
    println!("epoch losses: {:?}", report.epoch_losses);
    println!("test accuracy {:.4} after {:.1?}", report.test_accuracy, start.elapsed());

    bundle.save(&out)?;
    println!("wrote {out}");
    Ok(())
}
