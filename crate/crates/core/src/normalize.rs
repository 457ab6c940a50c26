use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reacher::Frame;

/// Per-channel pixel standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Normalization {
    pub const STD_FLOOR: f64 = 1e-3;

    pub fn identity() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    pub fn fit<'a, I: IntoIterator<Item = &'a Frame>>(frames: I) -> Result<Self> {
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let mut n = 0usize;
        for f in frames {
            for px in f.pixels.chunks_exact(3) {
                for c in 0..3 {
                    let v = px[c] as f64;
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
            n += f.width * f.height;
        }
        if n == 0 {
            return Err(Error::Empty("no frames to fit normalization".into()));
        }
        let mut mean = [0.0; 3];
        let mut std = [0.0; 3];
        for c in 0..3 {
            mean[c] = sum[c] / n as f64;
            let var = (sq[c] / n as f64 - mean[c] * mean[c]).max(0.0);
            std[c] = libm::sqrt(var).max(Self::STD_FLOOR);
        }
        Ok(Self { mean, std })
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.iter().chain(&self.std).any(|v| !v.is_finite())
            || self.std.iter().any(|&s| s <= 0.0)
        {
            return Err(Error::Config(
                "normalization must be finite with positive std".into(),
            ));
        }
        Ok(())
    }

    pub fn apply(&self, frame: &Frame) -> Vec<f64> {
        let inv = [1.0 / self.std[0], 1.0 / self.std[1], 1.0 / self.std[2]];
        let mut out = Vec::with_capacity(frame.pixels.len());
        for px in frame.pixels.chunks_exact(3) {
            for c in 0..3 {
                out.push((px[c] as f64 - self.mean[c]) * inv[c]);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn fit_and_apply() {
        let f = Frame {
            width: 2,
            height: 1,
            pixels: vec![0.0, 1.0, 0.5, 1.0, 1.0, 0.5],
        };
        let n = Normalization::fit([&f]).unwrap();
        assert_eq!(n.mean, [0.5, 1.0, 0.5]);
        assert_eq!(n.std[0], 0.5);
        assert_eq!(n.std[1], Normalization::STD_FLOOR);
        n.validate().unwrap();
        let x = n.apply(&f);
        assert_eq!(x[0], -1.0);
        assert_eq!(x[3], 1.0);
        assert!(Normalization::fit(core::iter::empty::<&Frame>()).is_err());
    }
}
