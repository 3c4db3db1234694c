//! The unlearning procedures: SMFA, IDK tuning, GA difference, KL
//! minimization and MANU pruning.

use serde::{Deserialize, Serialize};

use super::train::{answer_loss, batches, finetune, Trainable, TrainConfig, Trainer};
use crate::datagen::{make_refusal_set, QAItem, RefusalPool};
use crate::error::{Error, Result};
use crate::model::{
    apply_delta, forward_batch, forward_on_tape, place_weights, Batch, DeltaAdapter, ModelConfig,
    ModelWeights, Sign,
};
use crate::numerics::{log_softmax_rows, Tape, Tensor, Var};
use crate::sculptor::{extract_delta, sculpt_pipeline, MaskSet, SculptConfig, SculptStats};

/// Refusal-labelled forget items followed by the few-shot retain items.
pub fn mfa_training_set(
    forget: &[QAItem],
    retain_few: &[QAItem],
    pool: &RefusalPool,
    seed: u64,
) -> Result<Vec<QAItem>> {
    let mut data = make_refusal_set(forget, pool, seed)?;
    data.extend_from_slice(retain_few);
    Ok(data)
}

/// The memory forgetting adapter `ΔW_f` and the retaining anchor `ΔW_a`.
#[derive(Debug, Clone)]
pub struct AdapterPair {
    pub forget: DeltaAdapter,
    pub anchor: DeltaAdapter,
}

/// Fine-tunes both adapters from `base` with the same training settings.
pub fn train_adapters(
    base: &ModelWeights,
    config: &ModelConfig,
    forget: &[QAItem],
    retain_few: &[QAItem],
    pool: &RefusalPool,
    cfg: &TrainConfig,
) -> Result<AdapterPair> {
    let mfa_data = mfa_training_set(forget, retain_few, pool, cfg.seed)?;
    Ok(AdapterPair {
        forget: finetune(base, config, &mfa_data, cfg, "mfa")?,
        anchor: finetune(base, config, retain_few, cfg, "anchor")?,
    })
}

#[derive(Debug, Clone)]
pub struct SmfaOutcome {
    pub weights: ModelWeights,
    pub mask: MaskSet,
    pub sculpted: DeltaAdapter,
    pub adapters: AdapterPair,
    pub stats: SculptStats,
}

/// Fine-tunes the forgetting adapter and the retaining anchor, masks the
/// conflicting dominant entries of the former, and merges the rest.
pub fn smfa_unlearn(
    base: &ModelWeights,
    config: &ModelConfig,
    forget: &[QAItem],
    retain_few: &[QAItem],
    pool: &RefusalPool,
    train_cfg: &TrainConfig,
    sculpt_cfg: &SculptConfig,
) -> Result<SmfaOutcome> {
    let adapters = train_adapters(base, config, forget, retain_few, pool, train_cfg)?;
    let out = sculpt_pipeline(base, &adapters.forget, &adapters.anchor, sculpt_cfg)?;
    let mut sculpted = out.sculpted;
    sculpted.meta.method = "smfa".into();
    Ok(SmfaOutcome {
        weights: out.weights,
        mask: out.mask,
        sculpted,
        adapters,
        stats: out.stats,
    })
}

/// The unsculpted forgetting adapter applied directly.
pub fn idk_tuning_unlearn(
    base: &ModelWeights,
    config: &ModelConfig,
    forget: &[QAItem],
    retain_few: &[QAItem],
    pool: &RefusalPool,
    train_cfg: &TrainConfig,
) -> Result<ModelWeights> {
    let data = mfa_training_set(forget, retain_few, pool, train_cfg.seed)?;
    let delta = finetune(base, config, &data, train_cfg, "idk")?;
    apply_delta(base, &delta, Sign::Plus)
}

/// One GA/KL step: a forget batch with a retain batch drawn cyclically from
/// an independently shuffled retain order.
struct PairedStep {
    forget: Vec<usize>,
    retain: Vec<usize>,
}

fn paired_plan(
    n_forget: usize,
    n_retain: usize,
    batch_size: usize,
    rng: &mut crate::numerics::SeededRng,
) -> Vec<PairedStep> {
    let forget = batches(n_forget, batch_size, rng);
    let retain_order: Vec<usize> = batches(n_retain, n_retain, rng)
        .into_iter()
        .flatten()
        .collect();
    let mut cursor = 0;
    forget
        .into_iter()
        .map(|f| {
            let retain = (0..f.len().min(n_retain))
                .map(|_| {
                    let r = retain_order[cursor % n_retain];
                    cursor += 1;
                    r
                })
                .collect();
            PairedStep { forget: f, retain }
        })
        .collect()
}

fn pick<'a>(items: &'a [QAItem], idx: &[usize]) -> Vec<&'a QAItem> {
    idx.iter().map(|&i| &items[i]).collect()
}

fn check_sets(forget: &[QAItem], retain_few: &[QAItem]) -> Result<()> {
    if forget.is_empty() || retain_few.is_empty() {
        return Err(Error::EmptyData);
    }
    Ok(())
}

/// Gradient ascent on the forget loss plus descent on the retain loss,
/// `−CE(D_f) + CE(D_r^few)`, summed per paired batch.
pub fn ga_difference_unlearn(
    base: &ModelWeights,
    config: &ModelConfig,
    forget: &[QAItem],
    retain_few: &[QAItem],
    train_cfg: &TrainConfig,
) -> Result<ModelWeights> {
    check_sets(forget, retain_few)?;
    let trainer = Trainer {
        config,
        cfg: train_cfg,
        trainable: Trainable::WeightMatrices,
    };
    let (w, _) = trainer.run(
        base,
        |_, rng| paired_plan(forget.len(), retain_few.len(), train_cfg.batch_size, rng),
        |tape, vars, step: &PairedStep| {
            let lf = answer_loss(tape, vars, config, &pick(forget, &step.forget))?;
            let lr = answer_loss(tape, vars, config, &pick(retain_few, &step.retain))?;
            let neg = tape.scale(lf, -1.0);
            tape.add(neg, lr)
        },
        |_, _| Ok(false),
    )?;
    Ok(w)
}

/// Per-head `log p_base` for every item, `[n, answer_vocab]` per head.
fn reference_log_probs(
    base: &ModelWeights,
    config: &ModelConfig,
    items: &[QAItem],
) -> Result<Vec<Tensor>> {
    let queries: Vec<_> = items.iter().map(QAItem::query).collect();
    forward_batch(base, config, &queries)?
        .iter()
        .map(log_softmax_rows)
        .collect()
}

fn select_rows(t: &Tensor, rows: &[usize]) -> Tensor {
    let cols = t.shape()[1];
    let mut data = Vec::with_capacity(rows.len() * cols);
    for &r in rows {
        data.extend_from_slice(t.row(r));
    }
    Tensor::from_raw(vec![rows.len(), cols], data)
}

/// Mean over heads of `KL(p_base ‖ p_θ)` on `items`.
fn retain_kl(
    tape: &mut Tape,
    vars: &crate::model::ParamVars,
    config: &ModelConfig,
    items: &[&QAItem],
    reference: &[Tensor],
) -> Result<Var> {
    let queries: Vec<_> = items.iter().map(|i| i.query()).collect();
    let batch = Batch::new(config, &queries)?;
    let trace = forward_on_tape(tape, vars, config, &batch)?;
    let mut total: Option<Var> = None;
    for (logits, r) in trace.logits.iter().zip(reference) {
        let kl = tape.kl_from_reference(*logits, r)?;
        total = Some(match total {
            None => kl,
            Some(acc) => tape.add(acc, kl)?,
        });
    }
    Ok(tape.scale(total.expect("answer_len >= 1"), 1.0 / config.answer_len as f64))
}

/// Mean retain-set `KL(p_base ‖ p_θ)` over items and heads.
pub fn retain_kl_divergence(
    base: &ModelWeights,
    current: &ModelWeights,
    config: &ModelConfig,
    retain: &[QAItem],
) -> Result<f64> {
    if retain.is_empty() {
        return Err(Error::EmptyData);
    }
    let reference = reference_log_probs(base, config, retain)?;
    let mut tape = Tape::new();
    let vars = place_weights(&mut tape, current, |_| false);
    let refs: Vec<&QAItem> = retain.iter().collect();
    let kl = retain_kl(&mut tape, &vars, config, &refs, &reference)?;
    tape.value(kl).item()
}

/// Gradient ascent on the forget loss while tethering retain predictions to
/// the original model: `−CE(D_f) + KL(p_base ‖ p_θ)` on `D_r^few`.
pub fn kl_minimization_unlearn(
    base: &ModelWeights,
    config: &ModelConfig,
    forget: &[QAItem],
    retain_few: &[QAItem],
    train_cfg: &TrainConfig,
) -> Result<ModelWeights> {
    check_sets(forget, retain_few)?;
    let reference = reference_log_probs(base, config, retain_few)?;
    let trainer = Trainer {
        config,
        cfg: train_cfg,
        trainable: Trainable::WeightMatrices,
    };
    let (w, _) = trainer.run(
        base,
        |_, rng| paired_plan(forget.len(), retain_few.len(), train_cfg.batch_size, rng),
        |tape, vars, step: &PairedStep| {
            let lf = answer_loss(tape, vars, config, &pick(forget, &step.forget))?;
            let refs: Vec<Tensor> = reference.iter().map(|r| select_rows(r, &step.retain)).collect();
            let kl = retain_kl(tape, vars, config, &pick(retain_few, &step.retain), &refs)?;
            let neg = tape.scale(lf, -1.0);
            tape.add(neg, kl)
        },
        |_, _| Ok(false),
    )?;
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ManuConfig {
    /// Percentage of trunk neurons to prune, in (0, 100).
    pub alpha: f64,
    /// Activation magnitude counted as "firing" by the frequency statistic.
    pub tau: f64,
    pub epsilon: f64,
}

impl Default for ManuConfig {
    fn default() -> Self {
        Self {
            alpha: 5.0,
            tau: 0.05,
            epsilon: 1e-8,
        }
    }
}

impl ManuConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 100.0) {
            return Err(Error::Config(format!("alpha must be in (0, 100), got {}", self.alpha)));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be finite and > 0, got {}", self.tau)));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be finite and > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// A trunk hidden unit: layer index and position within the layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Neuron {
    pub layer: usize,
    pub unit: usize,
}

/// The four activation statistics and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    pub abs: f64,
    pub freq: f64,
    pub var: f64,
    pub rms: f64,
}

impl Importance {
    pub fn total(&self) -> f64 {
        self.abs + self.freq + self.var + self.rms
    }

    /// Statistics of one neuron's activations.
    pub fn from_activations(z: &[f64], tau: f64) -> Self {
        if z.is_empty() {
            return Self {
                abs: 0.0,
                freq: 0.0,
                var: 0.0,
                rms: 0.0,
            };
        }
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let mean_sq = z.iter().map(|v| v * v).sum::<f64>() / n;
        Self {
            abs: z.iter().map(|v| v.abs()).sum::<f64>() / n,
            freq: z.iter().filter(|v| v.abs() > tau).count() as f64 / n,
            var: z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n,
            rms: mean_sq.sqrt(),
        }
    }
}

/// Post-activation values of every trunk neuron over `items`, as
/// `[layer][unit] -> values in item order`.
pub fn trunk_activations(
    weights: &ModelWeights,
    config: &ModelConfig,
    items: &[QAItem],
) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut out = vec![vec![Vec::with_capacity(items.len()); config.hidden_dim]; config.hidden_layers];
    for chunk in items.chunks(512) {
        let queries: Vec<_> = chunk.iter().map(QAItem::query).collect();
        let batch = Batch::new(config, &queries)?;
        let mut tape = Tape::new();
        let vars = place_weights(&mut tape, weights, |_| false);
        let trace = forward_on_tape(&mut tape, &vars, config, &batch)?;
        for (layer, h) in trace.hidden.iter().enumerate() {
            let t = tape.value(*h);
            for r in 0..chunk.len() {
                for (unit, &v) in t.row(r).iter().enumerate() {
                    out[layer][unit].push(v);
                }
            }
        }
    }
    Ok(out)
}

/// Importance of every trunk neuron on `data`.
pub fn manu_importance(
    base: &ModelWeights,
    config: &ModelConfig,
    data: &[QAItem],
    manu: &ManuConfig,
) -> Result<Vec<(Neuron, Importance)>> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let acts = trunk_activations(base, config, data)?;
    Ok(acts
        .iter()
        .enumerate()
        .flat_map(|(layer, units)| {
            units.iter().enumerate().map(move |(unit, z)| {
                (Neuron { layer, unit }, Importance::from_activations(z, manu.tau))
            })
        })
        .collect())
}

/// `floor(alpha / 100 · n)`.
pub fn manu_prune_count(alpha: f64, n_neurons: usize) -> usize {
    ((alpha / 100.0) * n_neurons as f64).floor() as usize
}

/// Neurons with the largest `I(D_f) / (I(D_r^few) + ε)`; ties go to the lower
/// (layer, unit) index.
pub fn manu_select(
    base: &ModelWeights,
    config: &ModelConfig,
    forget: &[QAItem],
    retain_few: &[QAItem],
    manu: &ManuConfig,
) -> Result<Vec<Neuron>> {
    manu.validate()?;
    let f = manu_importance(base, config, forget, manu)?;
    let r = manu_importance(base, config, retain_few, manu)?;
    let mut scored: Vec<(Neuron, f64)> = f
        .iter()
        .zip(&r)
        .map(|((n, fi), (_, ri))| (*n, fi.total() / (ri.total() + manu.epsilon)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let count = manu_prune_count(manu.alpha, scored.len());
    let mut chosen: Vec<Neuron> = scored.into_iter().take(count).map(|(n, _)| n).collect();
    chosen.sort();
    Ok(chosen)
}

/// Zeroes each neuron's incoming row, bias and outgoing column.
pub fn ablate_neurons(
    base: &ModelWeights,
    config: &ModelConfig,
    neurons: &[Neuron],
) -> Result<ModelWeights> {
    let mut out = base.clone();
    for n in neurons {
        if n.layer >= config.hidden_layers || n.unit >= config.hidden_dim {
            return Err(Error::IndexOutOfRange {
                index: n.layer * config.hidden_dim + n.unit,
                bound: config.hidden_layers * config.hidden_dim,
            });
        }
        let w = out
            .get_mut(&ModelConfig::trunk_weight(n.layer))
            .ok_or_else(|| Error::SchemaMismatch("missing trunk weight".into()))?;
        let cols = w.shape()[1];
        w.data_mut()[n.unit * cols..(n.unit + 1) * cols].fill(0.0);
        let b = out
            .get_mut(&ModelConfig::trunk_bias(n.layer))
            .ok_or_else(|| Error::SchemaMismatch("missing trunk bias".into()))?;
        b.data_mut()[n.unit] = 0.0;
        for consumer in config.consumer_of_trunk(n.layer) {
            let c = out
                .get_mut(&consumer)
                .ok_or_else(|| Error::SchemaMismatch(format!("missing `{consumer}`")))?;
            let cols = c.shape()[1];
            let rows = c.shape()[0];
            for r in 0..rows {
                c.data_mut()[r * cols + n.unit] = 0.0;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ManuOutcome {
    pub weights: ModelWeights,
    pub pruned: Vec<Neuron>,
}

/// Prunes the trunk neurons most specific to the forget set.
pub fn manu_unlearn(
    base: &ModelWeights,
    config: &ModelConfig,
    forget: &[QAItem],
    retain_few: &[QAItem],
    manu: &ManuConfig,
) -> Result<ManuOutcome> {
    check_sets(forget, retain_few)?;
    let pruned = manu_select(base, config, forget, retain_few, manu)?;
    Ok(ManuOutcome {
        weights: ablate_neurons(base, config, &pruned)?,
        pruned,
    })
}

/// Delta from `base` to an unlearned model, for methods that produce one.
pub fn delta_for(unlearned: &ModelWeights, base: &ModelWeights, method: &str, seed: u64) -> Result<DeltaAdapter> {
    let mut d = extract_delta(unlearned, base)?;
    d.meta.method = method.to_string();
    d.meta.seed = seed;
    Ok(d)
}
