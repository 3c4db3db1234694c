//! Shared setup for the examples that need a trained original model.
//!
//! By default a reduced benchmark is trained for a few seconds. Pass `full`
//! as the first argument to use the desk-scale defaults instead (minutes).

#![allow(dead_code)]

use std::time::Instant;

use smfa::cli::ExperimentConfig;
use smfa::datagen::Dataset;
use smfa::methods::fit_original;
use smfa::model::{ModelConfig, ModelWeights};

pub struct Setup {
    pub cfg: ExperimentConfig,
    pub data: Dataset,
    pub config: ModelConfig,
    pub base: ModelWeights,
}

pub fn full_scale() -> bool {
    std::env::args().nth(1).as_deref() == Some("full")
}

pub fn experiment(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default().with_seed(seed);
    if !full_scale() {
        cfg.bench.n_profiles = 60;
        cfg.bench.n_holdout = 15;
        cfg.bench.n_unknown = 15;
        cfg.model.hidden_dim = 64;
        cfg.model.hidden_layers = 2;
        cfg.train.epochs = 200;
    }
    cfg
}

pub fn setup(seed: u64) -> smfa::Result<Setup> {
    let cfg = experiment(seed);
    let data = Dataset::generate(&cfg.bench)?;
    let config = cfg.model_config();
    let start = Instant::now();
    let fit = fit_original(&data, &config, &cfg.train, &cfg.targets)?;
    eprintln!(
        "original: {} epochs in {:.1}s, memory {:.3}, holdout understanding {:.3}",
        fit.epochs_run,
        start.elapsed().as_secs_f64(),
        fit.metrics.memory_exact_match,
        fit.metrics.holdout_understanding
    );
    Ok(Setup {
        cfg,
        data,
        config,
        base: fit.weights,
    })
}
