use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Named parameter or gradient tensors.
pub type ParamMap = BTreeMap<String, Tensor>;

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled decay: each step first scales parameters by `1 − lr·wd`.
    pub weight_decay: f64,
    step: u64,
    first_moment: ParamMap,
    second_moment: ParamMap,
}

impl OptimizerState {
    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Adam, learning_rate)
    }

    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
            step: 0,
            first_moment: ParamMap::new(),
            second_moment: ParamMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Updates every parameter that has a gradient, in place. Parameters
    /// without a gradient are left alone.
    pub fn step(&mut self, params: &mut ParamMap, grads: &ParamMap) -> Result<()> {
        for (name, grad) in grads {
            let param = params
                .get(name)
                .ok_or_else(|| Error::SchemaMismatch(format!("gradient for unknown `{name}`")))?;
            param.expect_same_shape(grad)?;
        }
        self.step += 1;
        if self.weight_decay > 0.0 {
            let shrink = 1.0 - self.learning_rate * self.weight_decay;
            for name in grads.keys() {
                let param = params.get_mut(name).expect("checked above");
                param.data_mut().iter_mut().for_each(|p| *p *= shrink);
            }
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (name, grad) in grads {
                    let param = params.get_mut(name).expect("checked above");
                    for (p, g) in param.data_mut().iter_mut().zip(grad.data()) {
                        *p -= self.learning_rate * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as f64;
                let bc1 = 1.0 - self.beta1.powf(t);
                let bc2 = 1.0 - self.beta2.powf(t);
                for (name, grad) in grads {
                    let param = params.get_mut(name).expect("checked above");
                    let m = self
                        .first_moment
                        .entry(name.clone())
                        .or_insert_with(|| Tensor::zeros(grad.shape()));
                    let v = self
                        .second_moment
                        .entry(name.clone())
                        .or_insert_with(|| Tensor::zeros(grad.shape()));
                    for (((p, g), m), v) in param
                        .data_mut()
                        .iter_mut()
                        .zip(grad.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                    {
                        *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                        *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                        let m_hat = *m / bc1;
                        let v_hat = *v / bc2;
                        *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Global L2 norm over all gradients.
pub fn global_norm(grads: &ParamMap) -> f64 {
    grads.values().map(Tensor::sum_squares).sum::<f64>().sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut ParamMap, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> ParamMap {
        ParamMap::from([("w".to_string(), Tensor::full(&[1, 1], v))])
    }

    #[test]
    fn sgd_step() {
        let mut opt = OptimizerState::sgd(0.1);
        let mut p = single(1.0);
        opt.step(&mut p, &single(10.0)).unwrap();
        assert_eq!(p["w"].data(), &[0.0]);
    }

    #[test]
    fn zero_grads_leave_params() {
        for mut opt in [OptimizerState::sgd(0.1), OptimizerState::adam(0.1)] {
            let mut p = single(1.5);
            opt.step(&mut p, &single(0.0)).unwrap();
            assert_eq!(p["w"].data(), &[1.5]);
            assert_eq!(opt.step_count(), 1);
        }
    }

    #[test]
    fn adam_first_step() {
        // m̂ = g and v̂ = g² after bias correction, so the step is lr·g/(|g|+eps).
        let mut opt = OptimizerState::adam(0.001);
        let mut p = single(1.0);
        opt.step(&mut p, &single(1.0)).unwrap();
        let expected = 1.0 - 0.001 / (1.0 + 1e-8);
        assert!((p["w"].data()[0] - expected).abs() < 1e-15);
        assert!((p["w"].data()[0] - 0.999).abs() < 1e-10);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut opt = OptimizerState::sgd(0.1);
        let mut p = single(1.0);
        let g = ParamMap::from([("w".to_string(), Tensor::zeros(&[2]))]);
        assert!(matches!(opt.step(&mut p, &g), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn clipping() {
        let mut g = ParamMap::from([(
            "w".to_string(),
            Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap(),
        )]);
        let n = clip_global_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-12);
    }
}
