use alloc::vec::Vec;

use super::loss::{Batch, MlpObjective, Objective};
use super::{NetSpec, ParamVector};
use crate::error::{Error, Result};
use crate::scalar::Dual;

/// Gradient of `query(θ − α∇support(θ))` with respect to `θ`.
///
/// Exact mode differentiates through the inner step:
/// `(I − α H_support(θ)) ∇query(θ')`, with the Hessian-vector product taken by
/// pushing a dual tangent through the support gradient. First-order mode
/// returns `∇query(θ')`.
pub fn meta_grad<A: Objective, B: Objective>(
    support: &A,
    query: &B,
    theta: &[f64],
    alpha: f64,
    first_order: bool,
) -> Result<(f64, Vec<f64>)> {
    if support.param_len() != theta.len() || query.param_len() != theta.len() {
        return Err(Error::Shape(
            "support, query and θ disagree on parameter count".into(),
        ));
    }
    let (_, g_support) = support.loss_grad::<f64>(theta)?;
    let adapted: Vec<f64> = theta
        .iter()
        .zip(&g_support)
        .map(|(t, g)| t - alpha * g)
        .collect();
    let (q_loss, g_query) = query.loss_grad::<f64>(&adapted)?;
    if first_order {
        return Ok((q_loss, g_query));
    }
    let dual_theta: Vec<Dual> = theta
        .iter()
        .zip(&g_query)
        .map(|(&t, &v)| Dual::new(t, v))
        .collect();
    let (_, dual_grad) = support.loss_grad::<Dual>(&dual_theta)?;
    let meta = g_query
        .iter()
        .zip(&dual_grad)
        .map(|(&gq, hv)| gq - alpha * hv.eps)
        .collect();
    Ok((q_loss, meta))
}

/// [`meta_grad`] for a plain network over support and query batches.
pub fn meta_grad_maml(
    spec: &NetSpec,
    theta: &ParamVector,
    support: &Batch,
    query: &Batch,
    alpha: f64,
    first_order: bool,
) -> Result<(f64, Vec<f64>)> {
    theta.check(spec)?;
    if support.loss_kind != query.loss_kind || support.inputs.cols != query.inputs.cols {
        return Err(Error::Shape(
            "support and query batches differ in kind or width".into(),
        ));
    }
    let s = MlpObjective::new(spec, support)?;
    let q = MlpObjective::new(spec, query)?;
    meta_grad(&s, &q, &theta.to_f64(), alpha, first_order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::{init_params, loss_and_grad, Activation, LossKind, Matrix, Targets};
    use crate::scalar::Scalar;
    use alloc::vec;

    /// L(θ) = ½θ² over a single parameter.
    struct HalfSquare;

    impl Objective for HalfSquare {
        fn param_len(&self) -> usize {
            1
        }
        fn loss_grad<S: Scalar>(&self, p: &[S]) -> Result<(S, Vec<S>)> {
            Ok(((p[0] * p[0]).scale(0.5), vec![p[0]]))
        }
    }

    #[test]
    fn one_parameter_closed_form() {
        let (loss, exact) = meta_grad(&HalfSquare, &HalfSquare, &[1.0], 0.1, false).unwrap();
        assert!((loss - 0.405).abs() < 1e-12);
        assert!((exact[0] - 0.81).abs() < 1e-10);
        let (_, fo) = meta_grad(&HalfSquare, &HalfSquare, &[1.0], 0.1, true).unwrap();
        assert!((fo[0] - 0.9).abs() < 1e-10);
    }

    #[test]
    fn zero_alpha_reduces_to_query_gradient() {
        let spec = NetSpec::uniform(&[3, 5, 2], Activation::Tanh).unwrap();
        let theta = init_params(&spec, 4);
        let support = Batch::new(
            Matrix::new(2, 3, vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.6]).unwrap(),
            Targets::Labels(vec![0, 1]),
            LossKind::SoftmaxCe,
        )
        .unwrap();
        let query = Batch::new(
            Matrix::new(1, 3, vec![0.9, -0.3, 0.2]).unwrap(),
            Targets::Labels(vec![1]),
            LossKind::SoftmaxCe,
        )
        .unwrap();
        let (_, plain) = loss_and_grad(&spec, &theta, &query).unwrap();
        for fo in [false, true] {
            let (_, mg) = meta_grad_maml(&spec, &theta, &support, &query, 0.0, fo).unwrap();
            assert_eq!(mg, plain);
        }
    }
}
