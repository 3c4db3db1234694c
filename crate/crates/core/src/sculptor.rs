//! Retaining-anchor masking: extract deltas, mask conflicting updates, sculpt.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    apply_delta, is_weight_matrix, load_mask, same_schema, save_mask, DeltaAdapter, DeltaMeta,
    Digest, ModelWeights, Sign,
};
use crate::numerics::Tensor;

pub const DEFAULT_K: f64 = 5.0;
pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoScope {
    #[default]
    PerLayer,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SculptConfig {
    pub k: f64,
    pub epsilon: f64,
    pub rho_scope: RhoScope,
}

impl Default for SculptConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            epsilon: DEFAULT_EPSILON,
            rho_scope: RhoScope::PerLayer,
        }
    }
}

impl SculptConfig {
    pub fn with_k(k: f64) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k.is_finite() && self.k >= 0.0) {
            return Err(Error::Config(format!("k must be finite and >= 0, got {}", self.k)));
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

/// Binary masks keyed by layer name; every entry is exactly 0.0 or 1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub masks: BTreeMap<String, Tensor>,
}

impl MaskSet {
    fn from_rule(
        a: &BTreeMap<String, Tensor>,
        b: &BTreeMap<String, Tensor>,
        mut rule: impl FnMut(&str, f64, f64) -> bool,
    ) -> Result<Self> {
        same_schema(a, b)?;
        let mut masks = BTreeMap::new();
        for (name, ta) in a {
            let tb = &b[name];
            let data = ta
                .data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| if rule(name, x, y) { 1.0 } else { 0.0 })
                .collect();
            masks.insert(name.clone(), Tensor::from_raw(ta.shape().to_vec(), data));
        }
        Ok(Self { masks })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.masks.get(name)
    }

    pub fn count_ones(&self) -> usize {
        self.masks
            .values()
            .map(|m| m.data().iter().filter(|&&v| v == 1.0).count())
            .sum()
    }

    pub fn num_entries(&self) -> usize {
        self.masks.values().map(Tensor::len).sum()
    }

    pub fn is_binary(&self) -> bool {
        self.masks
            .values()
            .all(|m| m.data().iter().all(|&v| v == 0.0 || v == 1.0))
    }

    pub fn save(
        &self,
        method: &str,
        base: &Digest,
        seed: u64,
        k: f64,
        path: &Path,
    ) -> Result<()> {
        save_mask(&self.masks, method, base, seed, Some(k), path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (masks, _) = load_mask(path)?;
        let set = Self { masks };
        if !set.is_binary() {
            return Err(Error::Format("mask entries must be 0 or 1".into()));
        }
        Ok(set)
    }
}

/// `finetuned − base` per weight matrix; biases are not part of a delta.
pub fn extract_delta(finetuned: &ModelWeights, base: &ModelWeights) -> Result<DeltaAdapter> {
    same_schema(finetuned.tensors(), base.tensors())?;
    let mut tensors = BTreeMap::new();
    for (name, w) in finetuned.tensors() {
        if is_weight_matrix(name) {
            tensors.insert(name.clone(), w.sub(base.tensor(name)?)?);
        }
    }
    Ok(DeltaAdapter {
        tensors,
        meta: DeltaMeta {
            method: "finetune".into(),
            base_digest: base.digest(),
            seed: 0,
            k: None,
        },
    })
}

/// C: 1 where the anchor and forgetting updates have strictly opposite signs.
pub fn conflict_mask(delta_f: &DeltaAdapter, delta_a: &DeltaAdapter) -> Result<MaskSet> {
    MaskSet::from_rule(&delta_f.tensors, &delta_a.tensors, |_, f, a| a * f < 0.0)
}

/// ρ = ‖ΔW_f‖_F / (‖ΔW_a‖_F + ε).
pub fn scale_factor(delta_f: &Tensor, delta_a: &Tensor, epsilon: f64) -> f64 {
    delta_f.frobenius_norm() / (delta_a.frobenius_norm() + epsilon)
}

/// ρ for every layer under the configured scope.
pub fn scale_factors(
    delta_f: &DeltaAdapter,
    delta_a: &DeltaAdapter,
    config: &SculptConfig,
) -> Result<BTreeMap<String, f64>> {
    delta_f.expect_same_schema(delta_a)?;
    Ok(match config.rho_scope {
        RhoScope::PerLayer => delta_f
            .tensors
            .iter()
            .map(|(n, f)| (n.clone(), scale_factor(f, &delta_a.tensors[n], config.epsilon)))
            .collect(),
        RhoScope::Global => {
            let rho = delta_f.frobenius_norm() / (delta_a.frobenius_norm() + config.epsilon);
            delta_f.tensors.keys().map(|n| (n.clone(), rho)).collect()
        }
    })
}

/// R: 1 where the forgetting update dominates the scaled anchor update,
/// `k·ρ·|ΔW_a| < |ΔW_f|`.
pub fn magnitude_mask(
    delta_f: &DeltaAdapter,
    delta_a: &DeltaAdapter,
    config: &SculptConfig,
) -> Result<MaskSet> {
    config.validate()?;
    let rho = scale_factors(delta_f, delta_a, config)?;
    MaskSet::from_rule(&delta_f.tensors, &delta_a.tensors, |name, f, a| {
        config.k * rho[name] * a.abs() < f.abs()
    })
}

/// M = C ⊙ R.
pub fn combine_mask(c: &MaskSet, r: &MaskSet) -> Result<MaskSet> {
    MaskSet::from_rule(&c.masks, &r.masks, |_, x, y| x == 1.0 && y == 1.0)
}

/// ΔW′_f = ΔW_f ⊙ (1 − M). Unmasked entries are copied untouched.
pub fn sculpt(delta_f: &DeltaAdapter, mask: &MaskSet, k: Option<f64>) -> Result<DeltaAdapter> {
    same_schema(&delta_f.tensors, &mask.masks)?;
    let mut tensors = BTreeMap::new();
    for (name, d) in &delta_f.tensors {
        let m = &mask.masks[name];
        let data = d
            .data()
            .iter()
            .zip(m.data())
            .map(|(&v, &mv)| if mv == 1.0 { 0.0 } else { v })
            .collect();
        tensors.insert(name.clone(), Tensor::from_raw(d.shape().to_vec(), data));
    }
    let mut meta = delta_f.meta.clone();
    meta.k = k;
    Ok(DeltaAdapter { tensors, meta })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub rho: f64,
    pub conflict_fraction: f64,
    pub masked_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SculptStats {
    pub layers: BTreeMap<String, LayerStats>,
    pub masked_entries: usize,
    pub total_entries: usize,
}

impl SculptStats {
    pub fn masked_fraction(&self) -> f64 {
        if self.total_entries == 0 {
            0.0
        } else {
            self.masked_entries as f64 / self.total_entries as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct SculptOutcome {
    pub weights: ModelWeights,
    pub mask: MaskSet,
    pub sculpted: DeltaAdapter,
    pub stats: SculptStats,
}

fn fraction(mask: &Tensor) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    mask.data().iter().filter(|&&v| v == 1.0).count() as f64 / mask.len() as f64
}

/// Conflict and magnitude masks, sculpting, then merging into `base`.
pub fn sculpt_pipeline(
    base: &ModelWeights,
    delta_f: &DeltaAdapter,
    delta_a: &DeltaAdapter,
    config: &SculptConfig,
) -> Result<SculptOutcome> {
    config.validate()?;
    delta_f.expect_same_schema(delta_a)?;
    let c = conflict_mask(delta_f, delta_a)?;
    let r = magnitude_mask(delta_f, delta_a, config)?;
    let mask = combine_mask(&c, &r)?;
    let rho = scale_factors(delta_f, delta_a, config)?;
    let sculpted = sculpt(delta_f, &mask, Some(config.k))?;
    let weights = apply_delta(base, &sculpted, Sign::Plus)?;
    let layers = mask
        .masks
        .iter()
        .map(|(n, m)| {
            (
                n.clone(),
                LayerStats {
                    rho: rho[n],
                    conflict_fraction: fraction(&c.masks[n]),
                    masked_fraction: fraction(m),
                },
            )
        })
        .collect();
    let stats = SculptStats {
        layers,
        masked_entries: mask.count_ones(),
        total_entries: mask.num_entries(),
    };
    Ok(SculptOutcome {
        weights,
        mask,
        sculpted,
        stats,
    })
}
