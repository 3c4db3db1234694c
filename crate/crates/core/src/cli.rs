//! Experiment configuration and the pipeline commands behind the `smfa`
//! binary: gen, train, unlearn, eval, sweep-k and compare.
//!
//! Every command reads one [`ExperimentConfig`]. Values come from flags,
//! then the JSON config file, then defaults; `SMFA_HOME` relocates the
//! default output directories.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::datagen::{BenchSpec, Dataset};
use crate::error::{Error, Result};
use crate::eval::{
    compare_reports, evaluate_model, read_report, write_report, EvalReport, ReportFormat, CSV_HEADER,
};
use crate::methods::{
    curve_csv, delta_for, fit_original, ga_difference_unlearn, idk_tuning_unlearn,
    kl_minimization_unlearn, manu_unlearn, smfa_unlearn, train_adapters, FitMetrics, FitTargets,
    ManuConfig, TrainConfig,
};
use crate::model::{load_weights, save_delta, save_weights, ModelConfig, ModelWeights};
use crate::sculptor::{sculpt_pipeline, SculptConfig};

pub const DATASET_STEM: &str = "bench";
pub const ORIGINAL_CHECKPOINT: &str = "original.ckpt";

/// Free sizes of the network; vocabularies and answer length follow the
/// benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub hidden_layers: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            hidden_dim: 128,
            hidden_layers: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub data: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Paths {
    pub fn under(root: &Path) -> Self {
        Self {
            data: root.join("data"),
            checkpoints: root.join("checkpoints"),
            reports: root.join("reports"),
        }
    }
}

impl Default for Paths {
    fn default() -> Self {
        let root = std::env::var_os("SMFA_HOME")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("smfa_runs"));
        Self::under(&root)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub bench: BenchSpec,
    pub model: ModelSpec,
    /// Original fit.
    pub train: TrainConfig,
    pub targets: FitTargets,
    pub unlearn_train: TrainConfig,
    pub sculpt: SculptConfig,
    pub manu: ManuConfig,
    pub paths: Paths,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            bench: BenchSpec::default(),
            model: ModelSpec::default(),
            train: TrainConfig::original(),
            targets: FitTargets::default(),
            unlearn_train: TrainConfig::unlearning(),
            sculpt: SculptConfig::default(),
            manu: ManuConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl ExperimentConfig {
    /// Defaults overlaid with the JSON file at `path`, if any. Missing keys
    /// keep their defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg = match path {
            None => Self::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                let bad = |e: serde_json::Error| Error::Config(format!("{}: {e}", p.display()));
                let file: serde_json::Value = serde_json::from_str(&text).map_err(bad)?;
                let mut merged = serde_json::to_value(Self::default())?;
                merge_json(&mut merged, file);
                serde_json::from_value(merged).map_err(bad)?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// One root seed for data, original fit and unlearning.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.bench.seed = seed;
        self.train.seed = seed;
        self.unlearn_train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.bench.validate()?;
        self.model_config().validate()?;
        self.train.validate()?;
        self.unlearn_train.validate()?;
        self.sculpt.validate()?;
        self.manu.validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        crate::datagen::VocabLayout::new(&self.bench).model_config(
            &self.bench,
            self.model.embed_dim,
            self.model.hidden_dim,
            self.model.hidden_layers,
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn original_path(&self) -> PathBuf {
        self.paths.checkpoints.join(ORIGINAL_CHECKPOINT)
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.paths.data.join(format!("{DATASET_STEM}.jsonl"))
    }
}

/// Overlays `over` onto `base`, recursing into objects.
fn merge_json(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Exit status for an error: 2 config, 3 runtime or training, 4 I/O.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::UnknownMethod { .. }
        | Error::RatioTooLarge { .. }
        | Error::VocabOverflow(_)
        | Error::Json(_) => 2,
        Error::Io { .. } | Error::Format(_) => 4,
        _ => 3,
    }
}

/// SHA-256 of a file, hex encoded.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the dataset for `cfg.bench` into `out` (default `paths.data`).
pub fn cmd_gen(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<PathBuf> {
    let dir = out.unwrap_or(&cfg.paths.data);
    let data = Dataset::generate(&cfg.bench)?;
    data.write(dir, DATASET_STEM)?;
    Ok(dir.join(format!("{DATASET_STEM}.jsonl")))
}

/// The dataset under `paths.data`, re-split if `cfg.bench.forget_ratio`
/// differs from the ratio it was generated with.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let data = Dataset::read(&cfg.paths.data, DATASET_STEM)?;
    if data.spec.forget_ratio != cfg.bench.forget_ratio {
        let spec = BenchSpec {
            forget_ratio: cfg.bench.forget_ratio,
            ..data.spec.clone()
        };
        return Dataset::generate(&spec);
    }
    Ok(data)
}

fn load_original(cfg: &ExperimentConfig) -> Result<ModelWeights> {
    let (w, _) = load_weights(&cfg.original_path())?;
    w.validate(&cfg.model_config())?;
    Ok(w)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub curve: PathBuf,
    pub metrics: FitMetrics,
    pub epochs_run: usize,
}

/// Fits the original model, then writes its checkpoint and training curve.
/// Both files are written even when the fit misses its targets, in which
/// case `TargetNotReached` is returned afterwards.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    let data = load_dataset(cfg)?;
    let fit = fit_original(&data, &cfg.model_config(), &cfg.train, &cfg.targets)?;
    create_dir(&cfg.paths.checkpoints)?;
    let checkpoint = cfg.original_path();
    save_weights(&fit.weights, "original", cfg.train.seed, None, &checkpoint)?;
    let curve = cfg.paths.reports.join("original_curve.csv");
    write_text(&curve, &curve_csv(&fit.curve))?;
    if !fit.metrics.meets(&cfg.targets) {
        return Err(Error::TargetNotReached(format!(
            "after {} epochs: memory exact_match {:.4} (target {}), holdout understanding {:.4} (target {}); checkpoint kept at {}",
            fit.epochs_run,
            fit.metrics.memory_exact_match,
            cfg.targets.memory_exact_match,
            fit.metrics.holdout_understanding,
            cfg.targets.holdout_understanding,
            checkpoint.display()
        )));
    }
    Ok(TrainOutcome {
        checkpoint,
        curve,
        metrics: fit.metrics,
        epochs_run: fit.epochs_run,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Smfa,
    Idk,
    GaDiff,
    KlMin,
    Manu,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Smfa,
        Method::Idk,
        Method::GaDiff,
        Method::KlMin,
        Method::Manu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Smfa => "smfa",
            Method::Idk => "idk",
            Method::GaDiff => "ga-diff",
            Method::KlMin => "kl-min",
            Method::Manu => "manu",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownMethod {
                name: s.to_string(),
                known: Method::ALL.map(Method::name).join(", "),
            })
    }
}

/// Run manifest written next to every unlearned checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub method: String,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub dataset_digest: String,
    pub original_digest: String,
    pub outputs: Vec<PathBuf>,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone)]
pub struct UnlearnOutcome {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    pub weights: ModelWeights,
}

/// Runs one unlearning method from the original checkpoint and writes the
/// unlearned checkpoint, its delta (mask too for SMFA) and a manifest.
pub fn cmd_unlearn(cfg: &ExperimentConfig, method: &str) -> Result<UnlearnOutcome> {
    let method: Method = method.parse()?;
    cfg.validate()?;
    let start = Instant::now();
    let data = load_dataset(cfg)?;
    let base = load_original(cfg)?;
    let config = cfg.model_config();
    let forget = data.forget_set();
    let retain = data.retain_few_set();
    let train = &cfg.unlearn_train;
    let dir = &cfg.paths.checkpoints;
    create_dir(dir)?;
    let name = method.name();
    let checkpoint = dir.join(format!("{name}.ckpt"));
    let mut outputs = vec![checkpoint.clone()];
    let base_digest = base.digest();

    let weights = match method {
        Method::Smfa => {
            let out = smfa_unlearn(&base, &config, &forget, &retain, &data.pool, train, &cfg.sculpt)?;
            for (delta, file) in [
                (&out.adapters.forget, "smfa.mfa.delta"),
                (&out.adapters.anchor, "smfa.anchor.delta"),
                (&out.sculpted, "smfa.delta"),
            ] {
                let p = dir.join(format!("{file}.ckpt"));
                save_delta(delta, &p)?;
                outputs.push(p);
            }
            let p = dir.join("smfa.mask.ckpt");
            out.mask.save("smfa", &base_digest, train.seed, cfg.sculpt.k, &p)?;
            outputs.push(p);
            out.weights
        }
        other => {
            let w = match other {
                Method::Idk => idk_tuning_unlearn(&base, &config, &forget, &retain, &data.pool, train)?,
                Method::GaDiff => ga_difference_unlearn(&base, &config, &forget, &retain, train)?,
                Method::KlMin => kl_minimization_unlearn(&base, &config, &forget, &retain, train)?,
                Method::Manu => manu_unlearn(&base, &config, &forget, &retain, &cfg.manu)?.weights,
                Method::Smfa => unreachable!(),
            };
            let p = dir.join(format!("{name}.delta.ckpt"));
            save_delta(&delta_for(&w, &base, name, train.seed)?, &p)?;
            outputs.push(p);
            w
        }
    };
    save_weights(&weights, name, train.seed, Some(&base_digest), &checkpoint)?;

    let manifest = Manifest {
        method: name.to_string(),
        config: cfg.clone(),
        seed: train.seed,
        dataset_digest: file_digest(&cfg.dataset_path())?,
        original_digest: hex::encode(base_digest),
        outputs,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    let manifest_path = cfg.paths.reports.join(format!("{name}.manifest.json"));
    write_text(&manifest_path, &serde_json::to_string_pretty(&manifest)?)?;
    Ok(UnlearnOutcome {
        checkpoint,
        manifest: manifest_path,
        weights,
    })
}

/// Evaluates a checkpoint on every evaluation variant and writes
/// `<stem>.json` and `<stem>.csv` under `paths.reports`.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<(EvalReport, PathBuf)> {
    let data = load_dataset(cfg)?;
    let (weights, meta) = load_weights(checkpoint)?;
    let config = cfg.model_config();
    weights.validate(&config)?;
    let mut report = evaluate_model(&weights, &config, &data, &data.pool)?;
    report.manifest.insert("checkpoint".into(), file_digest(checkpoint)?);
    report.manifest.insert("method".into(), meta.method);
    report.manifest.insert("seed".into(), meta.seed.to_string());
    let stem = checkpoint
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".into());
    let json = cfg.paths.reports.join(format!("{stem}.json"));
    write_report(&report, &json, ReportFormat::Json)?;
    write_report(&report, &cfg.paths.reports.join(format!("{stem}.csv")), ReportFormat::Csv)?;
    Ok((report, json))
}

/// Fine-tunes the adapter pair once, then sculpts and evaluates at every
/// `k`. Returns the combined CSV (`k` prepended to the report columns),
/// also written to `paths.reports/sweep_k.csv`. Up to `jobs` values of `k`
/// are scored concurrently; the output does not depend on `jobs`.
pub fn cmd_sweep_k(cfg: &ExperimentConfig, ks: &[f64], jobs: usize) -> Result<String> {
    if ks.is_empty() {
        return Err(Error::Config("sweep-k needs at least one k".into()));
    }
    let data = load_dataset(cfg)?;
    let base = load_original(cfg)?;
    let config = cfg.model_config();
    let pair = train_adapters(
        &base,
        &config,
        &data.forget_set(),
        &data.retain_few_set(),
        &data.pool,
        &cfg.unlearn_train,
    )?;
    let dir = &cfg.paths.checkpoints;
    create_dir(dir)?;
    save_delta(&pair.forget, &dir.join("sweep.mfa.delta.ckpt"))?;
    save_delta(&pair.anchor, &dir.join("sweep.anchor.delta.ckpt"))?;

    let score = |k: f64| -> Result<EvalReport> {
        let sculpt = SculptConfig { k, ..cfg.sculpt };
        let out = sculpt_pipeline(&base, &pair.forget, &pair.anchor, &sculpt)?;
        evaluate_model(&out.weights, &config, &data, &data.pool)
    };
    let mut reports: Vec<Option<Result<EvalReport>>> = (0..ks.len()).map(|_| None).collect();
    for chunk_start in (0..ks.len()).step_by(jobs.max(1)) {
        let end = (chunk_start + jobs.max(1)).min(ks.len());
        std::thread::scope(|s| {
            let handles: Vec<_> = (chunk_start..end)
                .map(|i| (i, s.spawn(move || score(ks[i]))))
                .collect();
            for (i, h) in handles {
                reports[i] = Some(h.join().expect("sweep worker panicked"));
            }
        });
    }

    let mut csv = format!("k,{CSV_HEADER}\n");
    for (k, report) in ks.iter().zip(reports) {
        let report = report.expect("every k scored")?;
        for line in report.to_csv().lines().skip(1) {
            let _ = writeln!(csv, "{k},{line}");
        }
    }
    write_text(&cfg.paths.reports.join("sweep_k.csv"), &csv)?;
    Ok(csv)
}

/// Side-by-side CSV of report JSON files, labelled by file stem.
pub fn cmd_compare(paths: &[PathBuf]) -> Result<String> {
    let reports = paths
        .iter()
        .map(|p| {
            let label = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string());
            Ok((label, read_report(p)?))
        })
        .collect::<Result<Vec<_>>>()?;
    compare_reports(&reports)
}

/// Parses a comma-separated list of k values.
pub fn parse_k_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad k value `{t}`: {e}")))
        })
        .collect()
}
