//! The desk-scale bimodal network.
//!
//! ```text
//! question tokens ─ mean(q_embed rows) ─┐
//!                                       ├─ concat ─ [linear + GELU] × hidden_layers ─┬─ head.0 ─ logits[0]
//! feature vector ─ img_proj · feature ──┘                                            ├─ ...
//!                                                                                    └─ head.(L-1)
//! ```
//!
//! Each of the `L` heads classifies one answer position independently.
//! A zero feature vector selects the text-only input mode.

mod checkpoint;
mod delta;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{SeededRng, Tape, Tensor, Var};

pub use checkpoint::{
    load_checkpoint, load_delta, load_delta_for, load_mask, load_weights, save_checkpoint,
    save_delta, save_mask, save_weights, Checkpoint, CheckpointKind, CheckpointMeta,
    FORMAT_VERSION, MAGIC,
};
pub use delta::{
    apply_delta, apply_delta_unchecked, expand_lowrank, DeltaAdapter, DeltaMeta, LowRankAdapter,
    LowRankFactor, Sign,
};
pub(crate) use delta::same_schema;

/// SHA-256 digest of a weight map.
pub type Digest = [u8; 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub question_vocab: usize,
    pub answer_vocab: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub hidden_layers: usize,
    pub answer_len: usize,
    pub max_question_len: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("feature_dim", self.feature_dim),
            ("question_vocab", self.question_vocab),
            ("answer_vocab", self.answer_vocab),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("hidden_layers", self.hidden_layers),
            ("answer_len", self.answer_len),
            ("max_question_len", self.max_question_len),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be >= 1")));
            }
        }
        Ok(())
    }

    /// Every tensor name with its shape, in canonical (sorted) order.
    pub fn layer_shapes(&self) -> BTreeMap<String, Vec<usize>> {
        let mut out = BTreeMap::new();
        out.insert(
            "img_proj.weight".to_string(),
            vec![self.embed_dim, self.feature_dim],
        );
        out.insert(
            "q_embed.weight".to_string(),
            vec![self.question_vocab, self.embed_dim],
        );
        let mut fan_in = 2 * self.embed_dim;
        for i in 0..self.hidden_layers {
            out.insert(format!("trunk.{i}.weight"), vec![self.hidden_dim, fan_in]);
            out.insert(format!("trunk.{i}.bias"), vec![self.hidden_dim]);
            fan_in = self.hidden_dim;
        }
        for l in 0..self.answer_len {
            out.insert(
                format!("head.{l}.weight"),
                vec![self.answer_vocab, self.hidden_dim],
            );
            out.insert(format!("head.{l}.bias"), vec![self.answer_vocab]);
        }
        out
    }

    pub fn trunk_weight(i: usize) -> String {
        format!("trunk.{i}.weight")
    }

    pub fn trunk_bias(i: usize) -> String {
        format!("trunk.{i}.bias")
    }

    /// Name of the layer that consumes the outputs of trunk layer `i`.
    pub fn consumer_of_trunk(&self, i: usize) -> Vec<String> {
        if i + 1 < self.hidden_layers {
            vec![Self::trunk_weight(i + 1)]
        } else {
            (0..self.answer_len)
                .map(|l| format!("head.{l}.weight"))
                .collect()
        }
    }
}

/// True for tensors that take part in deltas (everything but biases).
pub fn is_weight_matrix(name: &str) -> bool {
    name.ends_with(".weight")
}

/// Named parameter tensors of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    tensors: BTreeMap<String, Tensor>,
}

impl ModelWeights {
    pub fn from_tensors(tensors: BTreeMap<String, Tensor>) -> Self {
        Self { tensors }
    }

    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            tensors: config
                .layer_shapes()
                .into_iter()
                .map(|(n, s)| {
                    let t = Tensor::zeros(&s);
                    (n, t)
                })
                .collect(),
        })
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn into_tensors(self) -> BTreeMap<String, Tensor> {
        self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::SchemaMismatch(format!("missing tensor `{name}`")))
    }

    /// Checks the name set and every shape against `config`.
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let expected = config.layer_shapes();
        if expected.len() != self.tensors.len() {
            return Err(Error::SchemaMismatch(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for (name, shape) in &expected {
            let t = self.tensor(name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch(format!(
                    "`{name}` is {:?}, config wants {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and little-endian payloads in name order.
    pub fn digest(&self) -> Digest {
        digest_tensors(&self.tensors)
    }

    pub fn bit_eq(&self, other: &ModelWeights) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((na, a), (nb, b))| na == nb && a.bit_eq(b))
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::all_finite)
    }
}

pub(crate) fn digest_tensors(tensors: &BTreeMap<String, Tensor>) -> Digest {
    let mut h = Sha256::new();
    for (name, t) in tensors {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((t.shape().len() as u64).to_le_bytes());
        for d in t.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().into()
}

/// Weights ~ normal(0, 1/sqrt(fan_in)), biases zero. The embedding table is
/// applied as `mix · q_embed`, so its fan_in is the question vocabulary.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<ModelWeights> {
    config.validate()?;
    let mut rng = SeededRng::new(seed);
    let mut tensors = BTreeMap::new();
    for (name, shape) in config.layer_shapes() {
        let t = if is_weight_matrix(&name) {
            let fan_in = if name == "q_embed.weight" { shape[0] } else { shape[1] };
            let std = 1.0 / (fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.normal_with(0.0, std)).collect();
            Tensor::from_raw(shape.clone(), data)
        } else {
            Tensor::zeros(&shape)
        };
        tensors.insert(name, t);
    }
    Ok(ModelWeights { tensors })
}

/// One model input: an optional feature vector (absent = zero vector) and
/// question tokens.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub feature: Option<&'a [f64]>,
    pub question: &'a [usize],
}

impl<'a> Query<'a> {
    pub fn new(feature: Option<&'a [f64]>, question: &'a [usize]) -> Self {
        Self { feature, question }
    }
}

/// Model inputs stacked into dense tensors.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[B, feature_dim]`
    pub features: Tensor,
    /// `[B, question_vocab]`; row `b` averages the question's one-hot rows.
    pub question_mix: Tensor,
}

impl Batch {
    pub fn new(config: &ModelConfig, queries: &[Query<'_>]) -> Result<Self> {
        let b = queries.len();
        let mut features = vec![0.0; b * config.feature_dim];
        let mut mix = vec![0.0; b * config.question_vocab];
        for (r, q) in queries.iter().enumerate() {
            if let Some(f) = q.feature {
                if f.len() != config.feature_dim {
                    return Err(Error::FeatureDimMismatch {
                        expected: config.feature_dim,
                        got: f.len(),
                    });
                }
                if f.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("feature vector".into()));
                }
                features[r * config.feature_dim..(r + 1) * config.feature_dim]
                    .copy_from_slice(f);
            }
            if q.question.len() > config.max_question_len {
                return Err(Error::Config(format!(
                    "question of length {} exceeds max_question_len {}",
                    q.question.len(),
                    config.max_question_len
                )));
            }
            let w = if q.question.is_empty() {
                0.0
            } else {
                1.0 / q.question.len() as f64
            };
            for &tok in q.question {
                if tok >= config.question_vocab {
                    return Err(Error::TokenOutOfRange {
                        token: tok,
                        vocab: config.question_vocab,
                    });
                }
                mix[r * config.question_vocab + tok] += w;
            }
        }
        Ok(Self {
            features: Tensor::from_raw(vec![b, config.feature_dim], features),
            question_mix: Tensor::from_raw(vec![b, config.question_vocab], mix),
        })
    }

    pub fn len(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Tape handles for the outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// One `[B, answer_vocab]` node per head.
    pub logits: Vec<Var>,
    /// Post-GELU activations of each trunk layer, `[B, hidden_dim]`.
    pub hidden: Vec<Var>,
}

/// Tape leaves for every model tensor.
pub type ParamVars = BTreeMap<String, Var>;

/// Places all weights on `tape`; names in `trainable` become parameters,
/// the rest constants.
pub fn place_weights(
    tape: &mut Tape,
    weights: &ModelWeights,
    trainable: impl Fn(&str) -> bool,
) -> ParamVars {
    weights
        .tensors
        .iter()
        .map(|(name, t)| {
            let v = if trainable(name) {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            };
            (name.clone(), v)
        })
        .collect()
}

fn var(vars: &ParamVars, name: &str) -> Result<Var> {
    vars.get(name)
        .copied()
        .ok_or_else(|| Error::SchemaMismatch(format!("missing tensor `{name}`")))
}

/// Records the forward pass of `batch` on `tape`.
pub fn forward_on_tape(
    tape: &mut Tape,
    vars: &ParamVars,
    config: &ModelConfig,
    batch: &Batch,
) -> Result<ForwardTrace> {
    let mix = tape.constant(batch.question_mix.clone());
    let feats = tape.constant(batch.features.clone());
    let text = tape.matmul(mix, var(vars, "q_embed.weight")?)?;
    let image = tape.matmul_nt(feats, var(vars, "img_proj.weight")?)?;
    let mut h = tape.concat_cols(text, image)?;
    let mut hidden = Vec::with_capacity(config.hidden_layers);
    for i in 0..config.hidden_layers {
        let z = tape.matmul_nt(h, var(vars, &ModelConfig::trunk_weight(i))?)?;
        let z = tape.add_bias(z, var(vars, &ModelConfig::trunk_bias(i))?)?;
        h = tape.gelu(z);
        hidden.push(h);
    }
    let mut logits = Vec::with_capacity(config.answer_len);
    for l in 0..config.answer_len {
        let z = tape.matmul_nt(h, var(vars, &format!("head.{l}.weight"))?)?;
        logits.push(tape.add_bias(z, var(vars, &format!("head.{l}.bias"))?)?);
    }
    Ok(ForwardTrace { logits, hidden })
}

/// Per-head logits `[B, answer_vocab]` for a batch of queries.
pub fn forward_batch(
    weights: &ModelWeights,
    config: &ModelConfig,
    queries: &[Query<'_>],
) -> Result<Vec<Tensor>> {
    let batch = Batch::new(config, queries)?;
    let mut tape = Tape::new();
    let vars = place_weights(&mut tape, weights, |_| false);
    let trace = forward_on_tape(&mut tape, &vars, config, &batch)?;
    Ok(trace
        .logits
        .iter()
        .map(|&v| tape.value(v).clone())
        .collect())
}

/// Logits `[answer_len, answer_vocab]` for a single input.
pub fn forward(
    weights: &ModelWeights,
    config: &ModelConfig,
    feature: &[f64],
    question: &[usize],
) -> Result<Tensor> {
    let heads = forward_batch(weights, config, &[Query::new(Some(feature), question)])?;
    let mut data = Vec::with_capacity(config.answer_len * config.answer_vocab);
    for h in &heads {
        data.extend_from_slice(h.row(0));
    }
    Ok(Tensor::from_raw(
        vec![config.answer_len, config.answer_vocab],
        data,
    ))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Argmax decoding of every head, `answer_len` tokens per query.
pub fn predict_batch(
    weights: &ModelWeights,
    config: &ModelConfig,
    queries: &[Query<'_>],
) -> Result<Vec<Vec<usize>>> {
    let heads = forward_batch(weights, config, queries)?;
    Ok((0..queries.len())
        .map(|r| heads.iter().map(|h| argmax(h.row(r))).collect())
        .collect())
}

pub fn predict_answer(
    weights: &ModelWeights,
    config: &ModelConfig,
    feature: &[f64],
    question: &[usize],
) -> Result<Vec<usize>> {
    Ok(predict_batch(weights, config, &[Query::new(Some(feature), question)])?
        .pop()
        .expect("one query"))
}
