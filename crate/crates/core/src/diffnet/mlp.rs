use alloc::vec;
use alloc::vec::Vec;

use super::{Activation, NetSpec};
use crate::scalar::Scalar;

/// Layer outputs recorded by a forward pass: `acts[0]` is the input,
/// `acts[l + 1]` the output of layer `l` (post-activation for hidden layers).
#[derive(Debug, Clone)]
pub struct Trace<S> {
    pub acts: Vec<Vec<S>>,
}

impl<S: Scalar> Trace<S> {
    pub fn output(&self) -> &[S] {
        self.acts.last().unwrap()
    }

    pub fn into_output(mut self) -> Vec<S> {
        self.acts.pop().unwrap()
    }
}

#[inline]
fn dot<S: Scalar>(w: &[S], x: &[S]) -> S {
    let n = w.len();
    let mut acc = [S::zero(); 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += w[i] * x[i];
        acc[1] += w[i + 1] * x[i + 1];
        acc[2] += w[i + 2] * x[i + 2];
        acc[3] += w[i + 3] * x[i + 3];
    }
    let mut tail = S::zero();
    for i in chunks * 4..n {
        tail += w[i] * x[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Forward pass keeping every layer's output for [`backward`].
///
/// `params` and `input` lengths are trusted; callers validate shapes.
pub fn forward_trace<S: Scalar, I: Copy + Into<S>>(
    spec: &NetSpec,
    params: &[S],
    input: &[I],
) -> Trace<S> {
    let mut acts: Vec<Vec<S>> = Vec::with_capacity(spec.layer_sizes.len());
    acts.push(input.iter().map(|&v| v.into()).collect());
    let mut off = 0;
    for l in 0..spec.n_layers() {
        let (inw, outw) = (spec.layer_sizes[l], spec.layer_sizes[l + 1]);
        let w = &params[off..off + outw * inw];
        let b = &params[off + outw * inw..off + outw * (inw + 1)];
        off += outw * (inw + 1);
        let x = &acts[l];
        let mut y: Vec<S> = (0..outw)
            .map(|j| dot(&w[j * inw..(j + 1) * inw], x) + b[j])
            .collect();
        if l + 1 < spec.n_layers() {
            match spec.activations[l] {
                Activation::Tanh => y.iter_mut().for_each(|v| *v = v.tanh()),
                Activation::Relu => y.iter_mut().for_each(|v| {
                    if v.value() <= 0.0 {
                        *v = S::zero()
                    }
                }),
            }
        }
        acts.push(y);
    }
    Trace { acts }
}

/// Accumulates `∂L/∂params` into `grad` given `∂L/∂output`.
///
/// When `d_input` is provided it receives `∂L/∂input` (overwritten).
pub fn backward<S: Scalar>(
    spec: &NetSpec,
    params: &[S],
    trace: &Trace<S>,
    d_out: &[S],
    grad: &mut [S],
    mut d_input: Option<&mut [S]>,
) {
    let mut delta: Vec<S> = d_out.to_vec();
    for l in (0..spec.n_layers()).rev() {
        let (inw, outw) = (spec.layer_sizes[l], spec.layer_sizes[l + 1]);
        let off = spec.layer_offset(l);
        let x = &trace.acts[l];
        {
            let (gw, gb) = grad[off..off + outw * (inw + 1)].split_at_mut(outw * inw);
            for j in 0..outw {
                let dj = delta[j];
                if dj.is_zero() {
                    continue;
                }
                let row = &mut gw[j * inw..(j + 1) * inw];
                for (g, &xi) in row.iter_mut().zip(x.iter()) {
                    *g += dj * xi;
                }
                gb[j] += dj;
            }
        }
        let need_dx = l > 0 || d_input.is_some();
        if !need_dx {
            break;
        }
        let w = &params[off..off + outw * inw];
        let mut dx = vec![S::zero(); inw];
        for j in 0..outw {
            let dj = delta[j];
            if dj.is_zero() {
                continue;
            }
            for (d, &wji) in dx.iter_mut().zip(w[j * inw..(j + 1) * inw].iter()) {
                *d += wji * dj;
            }
        }
        if l == 0 {
            if let Some(di) = d_input.as_deref_mut() {
                di.copy_from_slice(&dx);
            }
            break;
        }
        let y = &trace.acts[l];
        match spec.activations[l - 1] {
            Activation::Tanh => {
                for (d, &yi) in dx.iter_mut().zip(y.iter()) {
                    *d = *d * (S::from_f64(1.0) - yi * yi);
                }
            }
            Activation::Relu => {
                for (d, &yi) in dx.iter_mut().zip(y.iter()) {
                    if yi.value() <= 0.0 {
                        *d = S::zero();
                    }
                }
            }
        }
        delta = dx;
    }
}
