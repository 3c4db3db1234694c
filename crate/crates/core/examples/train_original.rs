//! Fits the original model and prints its learning curve.
//!
//! cargo run --release --example train_original [-- full]

#[path = "common/mod.rs"]
mod common;

use std::time::Instant;

use smfa::datagen::Dataset;
use smfa::methods::{curve_csv, fit_original};

fn main() -> smfa::Result<()> {
    let cfg = common::experiment(1);
    let data = Dataset::generate(&cfg.bench)?;
    let config = cfg.model_config();
    println!(
        "{} training items, {} parameters per weight set",
        data.training_items().len(),
        config.layer_shapes().values().map(|s| s.iter().product::<usize>()).sum::<usize>()
    );
    let start = Instant::now();
    let fit = fit_original(&data, &config, &cfg.train, &cfg.targets)?;
    for p in fit.curve.iter().filter(|p| p.metrics.is_some()).step_by(2) {
        let m = p.metrics.unwrap();
        println!(
            "epoch {:>4}  loss {:.4}  memory {:.3}  holdout understanding {:.3}",
            p.epoch + 1,
            p.mean_loss,
            m.memory_exact_match,
            m.holdout_understanding
        );
    }
    println!(
        "{} epochs in {:.1}s; targets met: {}",
        fit.epochs_run,
        start.elapsed().as_secs_f64(),
        fit.metrics.meets(&cfg.targets)
    );
    let csv = curve_csv(&fit.curve);
    println!("curve csv: {} lines", csv.lines().count());
    Ok(())
}
