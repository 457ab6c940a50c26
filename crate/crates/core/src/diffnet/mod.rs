//! Small dense networks with exact gradients.
//!
//! Parameters live in a flat `f32` vector ([`ParamVector`]); all arithmetic
//! runs in `f64`. Layer `l` occupies `out_l × in_l` row-major weights followed
//! by `out_l` biases, layers in order.

mod loss;
mod maml;
mod mlp;
mod optim;

pub use loss::{
    finite_diff, finite_diff_grad, logistic_ce, loss_and_grad, mse, softmax_ce, Batch, LossKind,
    Matrix, MlpObjective, Objective, Targets,
};
pub use maml::{meta_grad, meta_grad_maml};
pub use mlp::{backward, forward_trace, Trace};
pub use optim::{optimizer_step, OptimizerKind, OptimizerState};

use alloc::vec::Vec;
use alloc::{format, vec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    #[default]
    Linear,
}

/// Architecture of a feed-forward network.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetSpec {
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    #[serde(default)]
    pub output_activation: OutputActivation,
}

impl NetSpec {
    pub fn new(layer_sizes: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        let spec = Self {
            layer_sizes,
            activations,
            output_activation: OutputActivation::Linear,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Every hidden layer uses the same activation.
    pub fn uniform(layer_sizes: &[usize], act: Activation) -> Result<Self> {
        let hidden = layer_sizes.len().saturating_sub(2);
        Self::new(layer_sizes.to_vec(), vec![act; hidden])
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::Config(format!(
                "a network needs at least 2 layer sizes, got {}",
                self.layer_sizes.len()
            )));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.activations.len() != self.layer_sizes.len() - 2 {
            return Err(Error::Config(format!(
                "{} hidden layers but {} activations",
                self.layer_sizes.len() - 2,
                self.activations.len()
            )));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    /// Offset of layer `l`'s weight block; biases follow at `+ out*in`.
    pub fn layer_offset(&self, l: usize) -> usize {
        self.layer_sizes[..l + 1]
            .windows(2)
            .map(|w| w[1] * (w[0] + 1))
            .sum()
    }

    /// FNV-1a fingerprint of the architecture.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        feed(self.layer_sizes.len() as u64);
        for &s in &self.layer_sizes {
            feed(s as u64);
        }
        for a in &self.activations {
            feed(match a {
                Activation::Tanh => 1,
                Activation::Relu => 2,
            });
        }
        feed(match self.output_activation {
            OutputActivation::Linear => 7,
        });
        h
    }
}

/// Flat parameter array tied to the architecture it was built for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f32>,
    pub spec_hash: u64,
}

impl ParamVector {
    pub fn zeros(spec: &NetSpec) -> Self {
        Self {
            values: vec![0.0; spec.param_count()],
            spec_hash: spec.fingerprint(),
        }
    }

    pub fn from_values(spec: &NetSpec, values: Vec<f32>) -> Result<Self> {
        if values.len() != spec.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                spec.param_count(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                index: i,
                what: "parameter".into(),
            });
        }
        Ok(Self {
            values,
            spec_hash: spec.fingerprint(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    pub(crate) fn check(&self, spec: &NetSpec) -> Result<()> {
        if self.values.len() != spec.param_count() {
            return Err(Error::Shape(format!(
                "parameter vector has {} entries, architecture needs {}",
                self.values.len(),
                spec.param_count()
            )));
        }
        Ok(())
    }
}

/// Uniform(±1/√fan_in) weights, zero biases.
pub fn init_params(spec: &NetSpec, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(spec.param_count());
    for w in spec.layer_sizes.windows(2) {
        let (fan_in, out) = (w[0], w[1]);
        let bound = 1.0 / libm::sqrt(fan_in as f64);
        for _ in 0..out * fan_in {
            values.push(rng.random_range(-bound..bound) as f32);
        }
        values.extend(core::iter::repeat_n(0.0f32, out));
    }
    ParamVector {
        values,
        spec_hash: spec.fingerprint(),
    }
}

/// Output-layer values (pre-activation) for one input row.
pub fn forward(spec: &NetSpec, params: &ParamVector, input: &[f64]) -> Result<Vec<f64>> {
    params.check(spec)?;
    if input.len() != spec.input_width() {
        return Err(Error::Shape(format!(
            "input has width {}, network expects {}",
            input.len(),
            spec.input_width()
        )));
    }
    let p = params.to_f64();
    let trace = forward_trace(spec, &p, input);
    Ok(trace.into_output())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_count_matches_layer_formula() {
        let spec = NetSpec::uniform(&[2, 3, 1], Activation::Tanh).unwrap();
        assert_eq!(spec.param_count(), 13);
        assert_eq!(init_params(&spec, 0).len(), 13);
        assert_eq!(spec.layer_offset(0), 0);
        assert_eq!(spec.layer_offset(1), 9);
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let spec = NetSpec::uniform(&[1, 1], Activation::Tanh).unwrap();
        let p = init_params(&spec, 42);
        assert_eq!(p.values[1], 0.0);
        assert_eq!(p, init_params(&spec, 42));

        let big = NetSpec::uniform(&[16, 8, 3], Activation::Relu).unwrap();
        let a = init_params(&big, 9);
        assert_eq!(a, init_params(&big, 9));
        assert_ne!(a, init_params(&big, 10));
        let bound = 1.0 / 4.0;
        assert!(a.values[..128].iter().all(|v| v.abs() <= bound));
        assert!(a.values[128..136].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(NetSpec::new(vec![3], vec![]).is_err());
        assert!(NetSpec::new(vec![3, 0, 1], vec![Activation::Tanh]).is_err());
        assert!(NetSpec::new(vec![3, 2, 1], vec![]).is_err());
    }

    #[test]
    fn forward_identity_zero_and_tanh_cases() {
        let spec = NetSpec::uniform(&[2, 2], Activation::Tanh).unwrap();
        let p = ParamVector::from_values(&spec, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(forward(&spec, &p, &[0.5, -0.5]).unwrap(), vec![0.5, -0.5]);
        let z = ParamVector::zeros(&spec);
        assert_eq!(forward(&spec, &z, &[3.0, -7.0]).unwrap(), vec![0.0, 0.0]);

        let spec = NetSpec::uniform(&[1, 1, 1], Activation::Tanh).unwrap();
        let p = ParamVector::from_values(&spec, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let out = forward(&spec, &p, &[1.0]).unwrap();
        assert!((out[0] - 0.761_594_155_955_764_9).abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_bad_shapes() {
        let spec = NetSpec::uniform(&[2, 1], Activation::Tanh).unwrap();
        let p = ParamVector::zeros(&spec);
        assert!(matches!(forward(&spec, &p, &[1.0]), Err(Error::Shape(_))));
        let other = NetSpec::uniform(&[3, 1], Activation::Tanh).unwrap();
        assert!(matches!(
            forward(&other, &p, &[1.0, 2.0, 3.0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let spec = NetSpec::uniform(&[5, 7, 3], Activation::Relu).unwrap();
        let p = init_params(&spec, 3);
        let x = [0.1, -0.2, 0.3, 0.9, -1.1];
        let a = forward(&spec, &p, &x).unwrap();
        let b = forward(&spec, &p, &x).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
