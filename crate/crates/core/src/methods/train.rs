//! Mini-batch training loops shared by every method.

use serde::{Deserialize, Serialize};

use crate::datagen::{QAItem, ANSWER_PAD};
use crate::error::{Error, Result};
use crate::model::{
    forward_on_tape, is_weight_matrix, place_weights, Batch, DeltaAdapter, ModelConfig, ModelWeights,
    ParamVars,
};
use crate::sculptor::extract_delta;
use crate::numerics::{
    clip_global_norm, OptimizerKind, OptimizerState, ParamMap, SeededRng, Tape, Var,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub grad_clip_norm: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            grad_clip_norm: 1.0,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Budget for fitting the original model.
    pub fn original() -> Self {
        Self {
            epochs: 400,
            batch_size: 32,
            learning_rate: 3e-3,
            optimizer: OptimizerKind::Adam,
            weight_decay: 0.1,
            ..Self::default()
        }
    }

    /// Budget shared by every unlearning fine-tune. Plain SGD keeps delta
    /// magnitudes proportional to the gradient signal, which the magnitude
    /// criterion compares; Adam would flatten them.
    pub fn unlearning() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.1,
            optimizer: OptimizerKind::Sgd,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.grad_clip_norm.is_finite() && self.grad_clip_norm > 0.0) {
            return Err(Error::Config("grad_clip_norm must be finite and > 0".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be finite and >= 0".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config("learning_rate must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Which tensors an optimizer may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trainable {
    All,
    /// Weight matrices only; biases stay frozen so the whole update is a delta.
    WeightMatrices,
}

impl Trainable {
    pub fn includes(self, name: &str) -> bool {
        match self {
            Trainable::All => true,
            Trainable::WeightMatrices => is_weight_matrix(name),
        }
    }
}

/// Answer tokens right-padded with PAD to `len`, one vector per head.
pub fn head_targets(items: &[&QAItem], len: usize) -> Vec<Vec<usize>> {
    (0..len)
        .map(|l| {
            items
                .iter()
                .map(|it| it.answer.get(l).copied().unwrap_or(ANSWER_PAD))
                .collect()
        })
        .collect()
}

/// Mean over heads of the batch-mean cross-entropy.
pub fn answer_loss(
    tape: &mut Tape,
    vars: &ParamVars,
    config: &ModelConfig,
    items: &[&QAItem],
) -> Result<Var> {
    let queries: Vec<_> = items.iter().map(|i| i.query()).collect();
    let batch = Batch::new(config, &queries)?;
    let trace = forward_on_tape(tape, vars, config, &batch)?;
    let targets = head_targets(items, config.answer_len);
    let mut total: Option<Var> = None;
    for (logits, t) in trace.logits.iter().zip(&targets) {
        let ce = tape.softmax_cross_entropy(*logits, t)?;
        total = Some(match total {
            None => ce,
            Some(acc) => tape.add(acc, ce)?,
        });
    }
    Ok(tape.scale(total.expect("answer_len >= 1"), 1.0 / config.answer_len as f64))
}

/// Per-epoch record of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
}

/// Runs `epochs` passes; `plan_epoch` lists the steps of an epoch and
/// `step_loss` records the loss of one step on the tape. Gradients are clipped to the configured
/// global norm before each optimizer step.
pub(crate) struct Trainer<'a> {
    pub config: &'a ModelConfig,
    pub cfg: &'a TrainConfig,
    pub trainable: Trainable,
}

impl Trainer<'_> {
    pub fn run<P, F, C>(
        &self,
        base: &ModelWeights,
        mut plan_epoch: impl FnMut(usize, &mut SeededRng) -> Vec<P>,
        mut step_loss: F,
        mut on_epoch: C,
    ) -> Result<(ModelWeights, Vec<EpochRecord>)>
    where
        F: FnMut(&mut Tape, &ParamVars, &P) -> Result<Var>,
        C: FnMut(usize, &ModelWeights) -> Result<bool>,
    {
        self.cfg.validate()?;
        let mut params: ParamMap = base.tensors().clone();
        let mut opt = OptimizerState::new(self.cfg.optimizer, self.cfg.learning_rate);
        opt.weight_decay = self.cfg.weight_decay;
        let mut rng = SeededRng::stream(self.cfg.seed, 0x5452_4149);
        let mut history = Vec::with_capacity(self.cfg.epochs);
        for epoch in 0..self.cfg.epochs {
            let plan = plan_epoch(epoch, &mut rng);
            let steps = plan.len();
            let mut loss_sum = 0.0;
            for (step, p) in plan.iter().enumerate() {
                let current = ModelWeights::from_tensors(std::mem::take(&mut params));
                let mut tape = Tape::new();
                let vars = place_weights(&mut tape, &current, |n| self.trainable.includes(n));
                let loss = step_loss(&mut tape, &vars, p)?;
                let value = tape.value(loss).item()?;
                if !value.is_finite() {
                    return Err(Error::DivergedLoss { epoch, step, value });
                }
                loss_sum += value;
                let mut grads = tape.backward(loss)?;
                let mut grad_map = ParamMap::new();
                for (name, v) in &vars {
                    if self.trainable.includes(name) {
                        if let Some(g) = grads.take(*v) {
                            grad_map.insert(name.clone(), g);
                        }
                    }
                }
                clip_global_norm(&mut grad_map, self.cfg.grad_clip_norm);
                params = current.into_tensors();
                opt.step(&mut params, &grad_map)?;
                if params.values().any(|t| !t.all_finite()) {
                    return Err(Error::DivergedLoss {
                        epoch,
                        step,
                        value: f64::NAN,
                    });
                }
            }
            history.push(EpochRecord {
                epoch,
                mean_loss: loss_sum / steps.max(1) as f64,
            });
            let snapshot = ModelWeights::from_tensors(params);
            let stop = on_epoch(epoch, &snapshot)?;
            params = snapshot.into_tensors();
            if stop {
                break;
            }
        }
        Ok((ModelWeights::from_tensors(params), history))
    }
}

/// Shuffled mini-batches of `0..n`.
pub(crate) fn batches(n: usize, batch_size: usize, rng: &mut SeededRng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Cross-entropy training of `trainable` tensors on `data`; returns the final
/// weights and per-epoch mean loss. `on_epoch` may stop training early.
pub fn train_on_items(
    base: &ModelWeights,
    config: &ModelConfig,
    data: &[QAItem],
    cfg: &TrainConfig,
    trainable: Trainable,
    on_epoch: impl FnMut(usize, &ModelWeights) -> Result<bool>,
) -> Result<(ModelWeights, Vec<EpochRecord>)> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let trainer = Trainer {
        config,
        cfg,
        trainable,
    };
    trainer.run(
        base,
        |_, rng| batches(data.len(), cfg.batch_size, rng),
        |tape, vars, batch: &Vec<usize>| {
            let items: Vec<&QAItem> = batch.iter().map(|&i| &data[i]).collect();
            answer_loss(tape, vars, trainer.config, &items)
        },
        on_epoch,
    )
}

/// Fine-tunes the weight matrices of `base` on `data` and returns the update
/// as a delta against `base`.
pub fn finetune(
    base: &ModelWeights,
    config: &ModelConfig,
    data: &[QAItem],
    cfg: &TrainConfig,
    method: &str,
) -> Result<DeltaAdapter> {
    let (tuned, _) = train_on_items(base, config, data, cfg, Trainable::WeightMatrices, |_, _| {
        Ok(false)
    })?;
    let mut delta = extract_delta(&tuned, base)?;
    delta.meta.method = method.to_string();
    delta.meta.seed = cfg.seed;
    Ok(delta)
}

/// Mean answer loss of `weights` on `items` (no training).
pub fn dataset_loss(weights: &ModelWeights, config: &ModelConfig, items: &[QAItem]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::EmptyData);
    }
    let mut total = 0.0;
    for chunk in items.chunks(256) {
        let refs: Vec<&QAItem> = chunk.iter().collect();
        let mut tape = Tape::new();
        let vars = place_weights(&mut tape, weights, |_| false);
        let loss = answer_loss(&mut tape, &vars, config, &refs)?;
        total += tape.value(loss).item()? * chunk.len() as f64;
    }
    Ok(total / items.len() as f64)
}
