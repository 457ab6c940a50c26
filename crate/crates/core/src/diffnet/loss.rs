use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::mlp::{backward, forward_trace};
use super::{NetSpec, ParamVector};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SoftmaxCe,
    LogisticCe,
    Mse,
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Labels(Vec<usize>),
    Values(Matrix),
}

/// Supervised examples plus the loss that scores them.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub targets: Targets,
    pub loss_kind: LossKind,
}

impl Batch {
    pub fn new(inputs: Matrix, targets: Targets, loss_kind: LossKind) -> Result<Self> {
        let n = match &targets {
            Targets::Labels(l) => l.len(),
            Targets::Values(m) => m.rows,
        };
        if n != inputs.rows {
            return Err(Error::Shape(format!(
                "{} input rows but {} targets",
                inputs.rows, n
            )));
        }
        Ok(Self {
            inputs,
            targets,
            loss_kind,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows == 0
    }

    fn check(&self, spec: &NetSpec) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Empty("batch has no examples".into()));
        }
        if self.inputs.cols != spec.input_width() {
            return Err(Error::Shape(format!(
                "batch inputs have width {}, network expects {}",
                self.inputs.cols,
                spec.input_width()
            )));
        }
        let k = spec.output_width();
        match (self.loss_kind, &self.targets) {
            (LossKind::SoftmaxCe, Targets::Labels(l)) => {
                if let Some(&bad) = l.iter().find(|&&y| y >= k) {
                    return Err(Error::Shape(format!("label {bad} outside [0, {k})")));
                }
            }
            (LossKind::LogisticCe, Targets::Labels(l)) => {
                if k != 1 {
                    return Err(Error::Shape("logistic loss needs output width 1".into()));
                }
                if l.iter().any(|&y| y > 1) {
                    return Err(Error::Shape("logistic labels must be 0 or 1".into()));
                }
            }
            (LossKind::LogisticCe, Targets::Values(m)) => {
                if k != 1 || m.cols != 1 {
                    return Err(Error::Shape("logistic loss needs output width 1".into()));
                }
            }
            (LossKind::Mse, Targets::Values(m)) => {
                if m.cols != k {
                    return Err(Error::Shape(format!(
                        "targets have width {}, network output {k}",
                        m.cols
                    )));
                }
            }
            (kind, _) => {
                return Err(Error::Shape(format!(
                    "target representation incompatible with {kind:?}"
                )))
            }
        }
        Ok(())
    }
}

/// Softmax cross entropy with max subtraction. Returns loss and ∂loss/∂logits.
pub fn softmax_ce<S: Scalar>(logits: &[S], label: usize) -> (S, Vec<S>) {
    let m = logits
        .iter()
        .map(|v| v.value())
        .fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<S> = logits.iter().map(|&z| (z - S::from_f64(m)).exp()).collect();
    let mut total = S::zero();
    for &e in &shifted {
        total += e;
    }
    let loss = total.ln() - (logits[label] - S::from_f64(m));
    let mut d: Vec<S> = shifted.iter().map(|&e| e / total).collect();
    d[label] -= S::from_f64(1.0);
    (loss, d)
}

/// Binary cross entropy on a single logit against target probability `t`.
pub fn logistic_ce<S: Scalar>(z: S, t: f64) -> (S, S) {
    let one = S::from_f64(1.0);
    // softplus(z) - t z, evaluated without overflow on either side
    let (softplus, sig) = if z.value() >= 0.0 {
        let e = (-z).exp();
        (z + (one + e).ln(), one / (one + e))
    } else {
        let e = z.exp();
        ((one + e).ln(), e / (one + e))
    };
    (softplus - z.scale(t), sig - S::from_f64(t))
}

/// Sum of squared errors over output dimensions.
pub fn mse<S: Scalar>(y: &[S], t: &[f64]) -> (S, Vec<S>) {
    let mut loss = S::zero();
    let mut d = Vec::with_capacity(y.len());
    for (&yi, &ti) in y.iter().zip(t) {
        let r = yi - S::from_f64(ti);
        loss += r * r;
        d.push(r.scale(2.0));
    }
    (loss, d)
}

/// A differentiable scalar objective over a flat parameter vector.
pub trait Objective {
    fn param_len(&self) -> usize;

    /// Loss and exact gradient, evaluated in scalar type `S`.
    fn loss_grad<S: Scalar>(&self, params: &[S]) -> Result<(S, Vec<S>)>;

    fn loss(&self, params: &[f64]) -> Result<f64> {
        self.loss_grad::<f64>(params).map(|(l, _)| l)
    }
}

/// Mean loss of a plain network over a [`Batch`].
pub struct MlpObjective<'a> {
    pub spec: &'a NetSpec,
    pub batch: &'a Batch,
}

impl<'a> MlpObjective<'a> {
    pub fn new(spec: &'a NetSpec, batch: &'a Batch) -> Result<Self> {
        batch.check(spec)?;
        Ok(Self { spec, batch })
    }
}

impl Objective for MlpObjective<'_> {
    fn param_len(&self) -> usize {
        self.spec.param_count()
    }

    fn loss_grad<S: Scalar>(&self, params: &[S]) -> Result<(S, Vec<S>)> {
        let n = self.batch.len();
        let inv_n = 1.0 / n as f64;
        let mut grad = vec![S::zero(); params.len()];
        let mut total = S::zero();
        for i in 0..n {
            let trace = forward_trace::<S, f64>(self.spec, params, self.batch.inputs.row(i));
            let out = trace.output();
            let (loss, mut d) = match (&self.batch.targets, self.batch.loss_kind) {
                (Targets::Labels(l), LossKind::SoftmaxCe) => softmax_ce(out, l[i]),
                (Targets::Labels(l), LossKind::LogisticCe) => {
                    let (loss, d) = logistic_ce(out[0], l[i] as f64);
                    (loss, vec![d])
                }
                (Targets::Values(m), LossKind::LogisticCe) => {
                    let (loss, d) = logistic_ce(out[0], m.row(i)[0]);
                    (loss, vec![d])
                }
                (Targets::Values(m), LossKind::Mse) => mse(out, m.row(i)),
                _ => unreachable!("validated in MlpObjective::new"),
            };
            if !loss.value().is_finite() {
                return Err(Error::Numeric {
                    index: i,
                    what: format!("loss {}", loss.value()),
                });
            }
            d.iter_mut().for_each(|v| *v = v.scale(inv_n));
            backward(self.spec, params, &trace, &d, &mut grad, None);
            total += loss;
        }
        Ok((total.scale(inv_n), grad))
    }
}

/// Batch-mean loss and its exact gradient.
pub fn loss_and_grad(
    spec: &NetSpec,
    params: &ParamVector,
    batch: &Batch,
) -> Result<(f64, Vec<f64>)> {
    params.check(spec)?;
    MlpObjective::new(spec, batch)?.loss_grad::<f64>(&params.to_f64())
}

/// Central differences with step `1e-5 · max(1, |θ_i|)`.
pub fn finite_diff<O: Objective>(obj: &O, params: &[f64]) -> Result<Vec<f64>> {
    let mut p = params.to_vec();
    let mut out = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        let h = 1e-5 * orig.abs().max(1.0);
        p[i] = orig + h;
        let up = obj.loss(&p)?;
        p[i] = orig - h;
        let down = obj.loss(&p)?;
        p[i] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

pub fn finite_diff_grad(spec: &NetSpec, params: &ParamVector, batch: &Batch) -> Result<Vec<f64>> {
    params.check(spec)?;
    finite_diff(&MlpObjective::new(spec, batch)?, &params.to_f64())
}
