use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::tensor::{Real, SeededRng, Tensor};

/// Inverted dropout: kept units are scaled by `1 / (1 - p)` in train mode,
/// so eval mode is the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutLayer {
    pub p: f64,
}

impl DropoutLayer {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!(
                "dropout probability {p} is outside [0, 1)"
            )));
        }
        Ok(DropoutLayer { p })
    }

    /// Draw a fresh `{0, 1/(1-p)}` mask shaped like `x`.
    pub fn sample_mask<T: Real>(&self, x: &Tensor<T>, rng: &mut SeededRng) -> Tensor<T> {
        let keep = T::of(1.0 / (1.0 - self.p));
        let data = (0..x.len())
            .map(|_| if rng.coin(self.p) { T::zero() } else { keep })
            .collect();
        Tensor::from_vec(x.shape(), data).expect("shape copied from x")
    }

    /// Returns the output and, in train mode with `p > 0`, the mask applied.
    pub fn forward<T: Real>(
        &self,
        x: &Tensor<T>,
        mode: Mode,
        rng: Option<&mut SeededRng>,
    ) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
        if mode == Mode::Eval || self.p == 0.0 {
            return Ok((x.clone(), None));
        }
        let rng = rng.ok_or_else(|| Error::State("train-mode dropout requires an rng".into()))?;
        let mask = self.sample_mask(x, rng);
        Ok((x.mul(&mask)?, Some(mask)))
    }

    pub fn backward<T: Real>(mask: Option<&Tensor<T>>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        match mask {
            None => Ok(upstream.clone()),
            Some(m) => upstream.mul(m),
        }
    }
}
