//! Reverse-mode automatic differentiation over a fixed primitive set.
//!
//! Every primitive appends one node to the [`Tape`]; inputs always precede
//! the node that consumes them, so the node vector is already in
//! topological order and [`Tape::backward`] is a single reverse sweep.
//!
//! Leaves come in two flavours: parameters created with [`Tape::param`]
//! receive gradients, constants created with [`Tape::constant`] do not,
//! and any node that depends only on constants is skipped during the sweep.

use super::tensor::{self, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    /// `x · wᵀ`
    MatMulNt(Var, Var),
    /// `x[B, N] + b[N]` broadcast over rows.
    AddBias(Var, Var),
    Gelu(Var),
    ConcatCols(Var, Var),
    Sum(Var),
    Mean(Var),
    SumSquares(Var),
    /// Mean softmax cross-entropy; keeps the softmax for the backward pass.
    SoftmaxCe {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor,
    },
    /// Mean over rows of `KL(ref ‖ softmax(logits))`.
    KlFromRef {
        logits: Var,
        ref_probs: Tensor,
        probs: Tensor,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation graph.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by node; only nodes that depend on a parameter have one.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    Ok(tensor::log_softmax_rows(logits)?.map(f64::exp))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Add(a, b), g))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Sub(a, b), g))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).mul(self.value(b))?;
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Mul(a, b), g))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).scale(c);
        let g = self.needs(a);
        self.push(v, Op::Scale(a, c), g)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::MatMul(a, b), g))
    }

    /// `x · wᵀ`, the layout used by linear layers storing `[out, in]` weights.
    pub fn matmul_nt(&mut self, x: Var, w: Var) -> Result<Var> {
        let v = tensor::matmul_nt(self.value(x), self.value(w))?;
        let g = self.needs(x) || self.needs(w);
        Ok(self.push(v, Op::MatMulNt(x, w), g))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        let b = self.value(bias);
        if b.shape() != [cols] {
            return Err(Error::ShapeMismatch(format!(
                "bias {:?} for rows of width {cols}",
                b.shape()
            )));
        }
        let mut out = self.value(x).clone();
        for r in 0..rows {
            for (o, bv) in out.data_mut()[r * cols..(r + 1) * cols]
                .iter_mut()
                .zip(b.data())
            {
                *o += bv;
            }
        }
        let g = self.needs(x) || self.needs(bias);
        Ok(self.push(out, Op::AddBias(x, bias), g))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(gelu);
        let g = self.needs(x);
        self.push(v, Op::Gelu(x), g)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.value(a).dims2()?;
        let (rb, cb) = self.value(b).dims2()?;
        if ra != rb {
            return Err(Error::ShapeMismatch(format!(
                "concat rows {ra} vs {rb}"
            )));
        }
        let mut out = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            out.extend_from_slice(self.value(a).row(r));
            out.extend_from_slice(self.value(b).row(r));
        }
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::from_raw(vec![ra, ca + cb], out),
            Op::ConcatCols(a, b),
            g,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        let g = self.needs(a);
        self.push(v, Op::Sum(a), g)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let v = Tensor::scalar(self.value(a).sum() / n);
        let g = self.needs(a);
        self.push(v, Op::Mean(a), g)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum_squares());
        let g = self.needs(a);
        self.push(v, Op::SumSquares(a), g)
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let loss = tensor::softmax_cross_entropy(self.value(logits), targets)?;
        let probs = softmax_rows(self.value(logits))?;
        let g = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            g,
        ))
    }

    /// Mean over rows of `KL(p_ref ‖ softmax(logits))`, where `ref_log_probs`
    /// holds `log p_ref` row by row. The value is exactly zero when the logits
    /// reproduce the reference log-probabilities bit for bit.
    pub fn kl_from_reference(&mut self, logits: Var, ref_log_probs: &Tensor) -> Result<Var> {
        let logq = tensor::log_softmax_rows(self.value(logits))?;
        logq.expect_same_shape(ref_log_probs)?;
        let (rows, _) = logq.dims2()?;
        if rows == 0 {
            return Err(Error::EmptyData);
        }
        let mut total = 0.0;
        for (lp, lq) in ref_log_probs.data().iter().zip(logq.data()) {
            if *lp != f64::NEG_INFINITY {
                total += lp.exp() * (lp - lq);
            }
        }
        let g = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(total / rows as f64),
            Op::KlFromRef {
                logits,
                ref_probs: ref_log_probs.map(f64::exp),
                probs: logq.map(f64::exp),
            },
            g,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::NotScalar(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(root.value.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, g: Tensor) -> Result<()> {
        if !self.needs(var) {
            return Ok(());
        }
        match &mut grads[var.0] {
            Some(existing) => existing.add_assign(&g)?,
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.scale(-1.0))?;
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, g.mul(self.value(*b))?)?;
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, g.mul(self.value(*a))?)?;
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.scale(*c))?,
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, tensor::matmul_nt(g, self.value(*b))?)?;
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, tensor::matmul_tn(self.value(*a), g)?)?;
                }
            }
            Op::MatMulNt(x, w) => {
                if self.needs(*x) {
                    self.accumulate(grads, *x, tensor::matmul(g, self.value(*w))?)?;
                }
                if self.needs(*w) {
                    self.accumulate(grads, *w, tensor::matmul_tn(g, self.value(*x))?)?;
                }
            }
            Op::AddBias(x, b) => {
                self.accumulate(grads, *x, g.clone())?;
                if self.needs(*b) {
                    let (rows, cols) = g.dims2()?;
                    let mut gb = vec![0.0; cols];
                    for r in 0..rows {
                        for (acc, v) in gb.iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    self.accumulate(grads, *b, Tensor::from_raw(vec![cols], gb))?;
                }
            }
            Op::Gelu(x) => {
                let dx = self.value(*x).zip_map(g, |xv, gv| gv * gelu_grad(xv))?;
                self.accumulate(grads, *x, dx)?;
            }
            Op::ConcatCols(a, b) => {
                let (rows, _) = g.dims2()?;
                let (_, ca) = self.value(*a).dims2()?;
                let (_, cb) = self.value(*b).dims2()?;
                let mut ga = Vec::with_capacity(rows * ca);
                let mut gb = Vec::with_capacity(rows * cb);
                for r in 0..rows {
                    let row = g.row(r);
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                self.accumulate(grads, *a, Tensor::from_raw(vec![rows, ca], ga))?;
                self.accumulate(grads, *b, Tensor::from_raw(vec![rows, cb], gb))?;
            }
            Op::Sum(a) => {
                let s = g.item()?;
                self.accumulate(grads, *a, Tensor::full(self.value(*a).shape(), s))?;
            }
            Op::Mean(a) => {
                let n = self.value(*a).len().max(1) as f64;
                let s = g.item()? / n;
                self.accumulate(grads, *a, Tensor::full(self.value(*a).shape(), s))?;
            }
            Op::SumSquares(a) => {
                let s = 2.0 * g.item()?;
                self.accumulate(grads, *a, self.value(*a).scale(s))?;
            }
            Op::SoftmaxCe {
                logits,
                targets,
                probs,
            } => {
                let (rows, cols) = probs.dims2()?;
                let s = g.item()? / rows as f64;
                let mut d = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    d.data_mut()[r * cols + t] -= 1.0;
                }
                self.accumulate(grads, *logits, d.scale(s))?;
            }
            Op::KlFromRef {
                logits,
                ref_probs,
                probs,
            } => {
                let (rows, _) = probs.dims2()?;
                let s = g.item()? / rows as f64;
                self.accumulate(grads, *logits, probs.sub(ref_probs)?.scale(s))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::from_vec(&[2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap());
        let loss = tape.sum(w);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap(), &Tensor::ones(&[2, 2]));
    }

    #[test]
    fn squared_norm_gradient_is_twice_w() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::from_vec(&[1, 2], vec![1.0, -2.0]).unwrap());
        let loss = tape.sum_squares(w);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[2.0, -4.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::ones(&[2, 2]));
        let w2 = tape.scale(w, 3.0);
        assert!(matches!(tape.backward(w2), Err(Error::NotScalar(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[1, 2]));
        let w = tape.param(Tensor::ones(&[3, 2]));
        let y = tape.matmul_nt(x, w).unwrap();
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(x).is_none());
        assert_eq!(g.get(w).unwrap(), &Tensor::ones(&[3, 2]));
    }

    #[test]
    fn shared_input_accumulates() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::from_vec(&[1, 1], vec![3.0]).unwrap());
        let y = tape.mul(w, w).unwrap();
        let z = tape.add(y, w).unwrap();
        let loss = tape.sum(z);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[7.0]);
    }

    #[test]
    fn kl_to_itself_is_exactly_zero() {
        let logits = Tensor::from_vec(&[2, 3], vec![0.1, -2.0, 3.0, 1.0, 1.0, 0.0]).unwrap();
        let reference = tensor::log_softmax_rows(&logits).unwrap();
        let mut tape = Tape::new();
        let z = tape.param(logits);
        let kl = tape.kl_from_reference(z, &reference).unwrap();
        assert_eq!(tape.value(kl).item().unwrap(), 0.0);
    }
}
