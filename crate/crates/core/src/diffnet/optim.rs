use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::ParamVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub step_count: u64,
    pub first_moment: Option<Vec<f64>>,
    pub second_moment: Option<Vec<f64>>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            step_count: 0,
            first_moment: None,
            second_moment: None,
            learning_rate,
            beta1: 0.0,
            beta2: 0.0,
            epsilon: 0.0,
        }
    }

    pub fn adam(learning_rate: f64, n_params: usize) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            step_count: 0,
            first_moment: Some(vec![0.0; n_params]),
            second_moment: Some(vec![0.0; n_params]),
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// In-place update of `params`; the functional form is [`optimizer_step`].
    pub fn apply(&mut self, params: &mut [f32], grad: &[f64]) -> Result<()> {
        if params.len() != grad.len() {
            return Err(Error::Shape(format!(
                "{} parameters but {} gradient entries",
                params.len(),
                grad.len()
            )));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric {
                index: i,
                what: "gradient entry".into(),
            });
        }
        self.step_count += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, &g) in params.iter_mut().zip(grad) {
                    *p = (*p as f64 - lr * g) as f32;
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
                let m = self.first_moment.as_mut().expect("adam state has moments");
                let v = self.second_moment.as_mut().expect("adam state has moments");
                if m.len() != params.len() || v.len() != params.len() {
                    return Err(Error::Shape("moment arrays do not match parameters".into()));
                }
                let t = self.step_count as i32;
                let c1 = 1.0 - libm::pow(b1, t as f64);
                let c2 = 1.0 - libm::pow(b2, t as f64);
                for i in 0..params.len() {
                    let g = grad[i];
                    m[i] = b1 * m[i] + (1.0 - b1) * g;
                    v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                    let mhat = m[i] / c1;
                    let vhat = v[i] / c2;
                    params[i] = (params[i] as f64 - lr * mhat / (libm::sqrt(vhat) + eps)) as f32;
                }
            }
        }
        Ok(())
    }
}

/// One optimizer update, returning new parameters and state.
pub fn optimizer_step(
    state: &OptimizerState,
    params: &ParamVector,
    grad: &[f64],
) -> Result<(ParamVector, OptimizerState)> {
    let mut next_state = state.clone();
    let mut next = params.clone();
    next_state.apply(&mut next.values, grad)?;
    Ok((next, next_state))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(values: Vec<f32>) -> ParamVector {
        ParamVector {
            values,
            spec_hash: 0,
        }
    }

    #[test]
    fn sgd_arithmetic() {
        let (p, s) =
            optimizer_step(&OptimizerState::sgd(0.1), &pv(vec![1.0, 2.0]), &[0.5, -1.0]).unwrap();
        assert_eq!(p.values, vec![0.95, 2.1]);
        assert_eq!(s.step_count, 1);
        assert!(s.first_moment.is_none() && s.second_moment.is_none());
    }

    #[test]
    fn zero_grad_leaves_params_but_counts_step() {
        for state in [OptimizerState::sgd(0.3), OptimizerState::adam(0.01, 2)] {
            let (p, s) = optimizer_step(&state, &pv(vec![1.5, -0.25]), &[0.0, 0.0]).unwrap();
            assert_eq!(p.values, vec![1.5, -0.25]);
            assert_eq!(s.step_count, 1);
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let start = vec![0.5f32, -2.0, 3.0];
        let (p, _) = optimizer_step(
            &OptimizerState::adam(1e-3, 3),
            &pv(start.clone()),
            &[0.7, -3.0, 1e-2],
        )
        .unwrap();
        for (a, b) in p.values.iter().zip(&start) {
            let moved = (*a as f64 - *b as f64).abs();
            assert!((moved - 1e-3).abs() < 1e-6, "moved {moved}");
        }
    }

    #[test]
    fn rejects_non_finite_and_mismatched_grads() {
        let s = OptimizerState::sgd(0.1);
        assert!(matches!(
            optimizer_step(&s, &pv(vec![1.0]), &[f64::NAN]),
            Err(Error::Numeric { index: 0, .. })
        ));
        assert!(matches!(
            optimizer_step(&s, &pv(vec![1.0]), &[1.0, 2.0]),
            Err(Error::Shape(_))
        ));
    }
}
