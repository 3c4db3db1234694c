//! Fitting the original model on the fine-tuning split.

use serde::{Deserialize, Serialize};

use super::train::{train_on_items, EpochRecord, Trainable, TrainConfig};
use crate::datagen::{Category, Dataset, QAItem, Split};
use crate::error::{Error, Result};
use crate::eval::{accuracy, predict_items};
use crate::model::{init_model, ModelConfig, ModelWeights};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitTargets {
    pub memory_exact_match: f64,
    pub holdout_understanding: f64,
    /// Targets are checked every this many epochs; training stops once both
    /// hold. Zero disables early stopping.
    pub check_every: usize,
    /// Also stop once memory has been on target and holdout understanding
    /// has not improved for this many consecutive checks. Zero disables this
    /// rule.
    pub patience: usize,
}

impl Default for FitTargets {
    fn default() -> Self {
        Self {
            memory_exact_match: 0.95,
            holdout_understanding: 0.80,
            check_every: 10,
            patience: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    pub memory_exact_match: f64,
    pub holdout_understanding: f64,
}

impl FitMetrics {
    pub fn meets(&self, targets: &FitTargets) -> bool {
        self.memory_exact_match >= targets.memory_exact_match
            && self.holdout_understanding >= targets.holdout_understanding
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub mean_loss: f64,
    pub metrics: Option<FitMetrics>,
}

#[derive(Debug, Clone)]
pub struct OriginalFit {
    pub weights: ModelWeights,
    pub metrics: FitMetrics,
    pub curve: Vec<CurvePoint>,
    pub epochs_run: usize,
}

fn exact_match(weights: &ModelWeights, config: &ModelConfig, items: &[QAItem]) -> Result<f64> {
    if items.is_empty() {
        return Ok(0.0);
    }
    let preds = predict_items(weights, config, items)?;
    let refs: Vec<Vec<usize>> = items.iter().map(|i| i.answer.clone()).collect();
    Ok(accuracy(&preds, &refs)?.exact_match)
}

/// Memory exact match on the training items and understanding exact match
/// on held-out profiles.
pub fn fit_metrics(weights: &ModelWeights, config: &ModelConfig, data: &Dataset) -> Result<FitMetrics> {
    let memory: Vec<QAItem> = data
        .training_items()
        .into_iter()
        .filter(|i| i.category.is_memory())
        .collect();
    let holdout: Vec<QAItem> = data
        .items
        .iter()
        .filter(|i| i.split == Split::Holdout && i.category == Category::Understanding)
        .cloned()
        .collect();
    Ok(FitMetrics {
        memory_exact_match: exact_match(weights, config, &memory)?,
        holdout_understanding: exact_match(weights, config, &holdout)?,
    })
}

/// Trains every tensor of a fresh model on the variant-0 training items.
/// Fails with `TargetNotReached` if the final metrics miss `targets`.
pub fn train_original(
    data: &Dataset,
    config: &ModelConfig,
    cfg: &TrainConfig,
    targets: &FitTargets,
) -> Result<OriginalFit> {
    let fit = fit_original(data, config, cfg, targets)?;
    if !fit.metrics.meets(targets) {
        return Err(Error::TargetNotReached(format!(
            "after {} epochs: memory exact_match {:.4} (target {}), holdout understanding {:.4} (target {})",
            fit.epochs_run,
            fit.metrics.memory_exact_match,
            targets.memory_exact_match,
            fit.metrics.holdout_understanding,
            targets.holdout_understanding
        )));
    }
    Ok(fit)
}

/// As [`train_original`] but returns the fit whether or not targets are met.
pub fn fit_original(
    data: &Dataset,
    config: &ModelConfig,
    cfg: &TrainConfig,
    targets: &FitTargets,
) -> Result<OriginalFit> {
    config.validate()?;
    let init = init_model(config, cfg.seed)?;
    let items = data.training_items();
    let mut checks: Vec<(usize, FitMetrics)> = Vec::new();
    let mut best_holdout = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut memorized = 0;
    let (weights, history) = train_on_items(&init, config, &items, cfg, Trainable::All, |epoch, w| {
        let every = targets.check_every;
        if every == 0 || (epoch + 1) % every != 0 {
            return Ok(false);
        }
        let m = fit_metrics(w, config, data)?;
        checks.push((epoch, m));
        if m.holdout_understanding > best_holdout {
            best_holdout = m.holdout_understanding;
            stale = 0;
        } else {
            stale += 1;
        }
        if m.memory_exact_match >= targets.memory_exact_match {
            memorized += 1;
        } else {
            memorized = 0;
        }
        let plateau = targets.patience > 0 && stale >= targets.patience && memorized >= targets.patience;
        Ok(m.meets(targets) || plateau)
    })?;
    let metrics = fit_metrics(&weights, config, data)?;
    let curve = curve_points(&history, &checks);
    Ok(OriginalFit {
        weights,
        metrics,
        epochs_run: history.len(),
        curve,
    })
}

fn curve_points(history: &[EpochRecord], checks: &[(usize, FitMetrics)]) -> Vec<CurvePoint> {
    history
        .iter()
        .map(|r| CurvePoint {
            epoch: r.epoch,
            mean_loss: r.mean_loss,
            metrics: checks.iter().find(|(e, _)| *e == r.epoch).map(|(_, m)| *m),
        })
        .collect()
}

/// `epoch,loss,memory_em,holdout_understanding` with blanks between checks.
pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("epoch,loss,memory_em,holdout_understanding\n");
    for p in curve {
        match p.metrics {
            Some(m) => out.push_str(&format!(
                "{},{:.6},{:.6},{:.6}\n",
                p.epoch, p.mean_loss, m.memory_exact_match, m.holdout_understanding
            )),
            None => out.push_str(&format!("{},{:.6},,\n", p.epoch, p.mean_loss)),
        }
    }
    out
}
