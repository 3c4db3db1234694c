use std::collections::BTreeMap;

use super::{Digest, ModelWeights};
use crate::error::{Error, Result};
use crate::numerics::{matmul, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaMeta {
    pub method: String,
    pub base_digest: Digest,
    pub seed: u64,
    pub k: Option<f64>,
}

/// Weight-matrix updates relative to a base checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaAdapter {
    pub tensors: BTreeMap<String, Tensor>,
    pub meta: DeltaMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

impl DeltaAdapter {
    /// An all-zero delta over the weight matrices of `base`.
    pub fn zeros_like(base: &ModelWeights, method: &str, seed: u64) -> Self {
        let tensors = base
            .tensors()
            .iter()
            .filter(|(n, _)| super::is_weight_matrix(n))
            .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
            .collect();
        Self {
            tensors,
            meta: DeltaMeta {
                method: method.to_string(),
                base_digest: base.digest(),
                seed,
                k: None,
            },
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.tensors
            .values()
            .map(Tensor::sum_squares)
            .sum::<f64>()
            .sqrt()
    }

    pub fn bit_eq(&self, other: &DeltaAdapter) -> bool {
        self.meta == other.meta
            && self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((na, a), (nb, b))| na == nb && a.bit_eq(b))
    }

    /// Fails unless both deltas cover the same names with the same shapes.
    pub fn expect_same_schema(&self, other: &DeltaAdapter) -> Result<()> {
        same_schema(&self.tensors, &other.tensors)
    }

    pub fn num_entries(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }
}

pub(crate) fn same_schema(
    a: &BTreeMap<String, Tensor>,
    b: &BTreeMap<String, Tensor>,
) -> Result<()> {
    if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
        return Err(Error::SchemaMismatch(format!(
            "layer sets differ: {:?} vs {:?}",
            a.keys().collect::<Vec<_>>(),
            b.keys().collect::<Vec<_>>()
        )));
    }
    for (name, ta) in a {
        let tb = &b[name];
        if ta.shape() != tb.shape() {
            return Err(Error::SchemaMismatch(format!(
                "`{name}`: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
    }
    Ok(())
}

/// `base ± delta` after checking the delta was extracted against `base`.
pub fn apply_delta(base: &ModelWeights, delta: &DeltaAdapter, sign: Sign) -> Result<ModelWeights> {
    let found = base.digest();
    if found != delta.meta.base_digest {
        return Err(Error::DigestMismatch {
            expected: hex::encode(delta.meta.base_digest),
            found: hex::encode(found),
        });
    }
    apply_delta_unchecked(base, delta, sign)
}

/// `base ± delta` without the digest check. Zero delta entries leave the
/// base value untouched bit for bit; layers absent from the delta are copied.
pub fn apply_delta_unchecked(
    base: &ModelWeights,
    delta: &DeltaAdapter,
    sign: Sign,
) -> Result<ModelWeights> {
    let s = sign.factor();
    let mut out = base.clone();
    for (name, d) in &delta.tensors {
        let w = out
            .get_mut(name)
            .ok_or_else(|| Error::SchemaMismatch(format!("delta layer `{name}` not in base")))?;
        if w.shape() != d.shape() {
            return Err(Error::ShapeMismatch(format!(
                "`{name}`: base {:?}, delta {:?}",
                w.shape(),
                d.shape()
            )));
        }
        for (wv, &dv) in w.data_mut().iter_mut().zip(d.data()) {
            if dv != 0.0 {
                *wv += s * dv;
            }
        }
    }
    Ok(out)
}

/// One factored update `B · A` with `A: [r, in]`, `B: [out, r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactor {
    pub a: Tensor,
    pub b: Tensor,
}

impl LowRankFactor {
    pub fn rank(&self) -> usize {
        self.a.shape().first().copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowRankAdapter {
    pub layers: BTreeMap<String, LowRankFactor>,
    pub meta: DeltaMeta,
}

impl LowRankAdapter {
    /// Dense `ΔW = B · A` per layer.
    pub fn expand(&self) -> Result<DeltaAdapter> {
        let mut tensors = BTreeMap::new();
        for (name, f) in &self.layers {
            let (r, _) = f.a.dims2()?;
            let (_, r2) = f.b.dims2()?;
            if r == 0 || r != r2 {
                return Err(Error::ShapeMismatch(format!(
                    "`{name}`: A {:?}, B {:?}",
                    f.a.shape(),
                    f.b.shape()
                )));
            }
            tensors.insert(name.clone(), matmul(&f.b, &f.a)?);
        }
        Ok(DeltaAdapter {
            tensors,
            meta: self.meta.clone(),
        })
    }
}

pub fn expand_lowrank(adapter: &LowRankAdapter) -> Result<DeltaAdapter> {
    adapter.expand()
}
