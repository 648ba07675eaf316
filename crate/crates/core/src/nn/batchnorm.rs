use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::tensor::{Real, Tensor};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over NCHW input.
///
/// Train mode normalizes with the batch mean and biased variance over
/// (n, h, w) and folds the batch statistics into the running estimates as
/// `running <- (1 - momentum) * running + momentum * batch` (the variance
/// fed to the running estimate is the unbiased one). Eval mode reads only
/// the running estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormLayer<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

struct Stats {
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl<T: Real> BatchNormLayer<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormLayer {
            gamma: Tensor::create(&[channels], crate::tensor::Fill::Constant(1.0), None)
                .expect("positive channel count"),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::create(&[channels], crate::tensor::Fill::Constant(1.0), None)
                .expect("positive channel count"),
            momentum: DEFAULT_MOMENTUM,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<[usize; 4]> {
        let dims = x.dims::<4>("batch norm input")?;
        if dims[1] != self.channels() {
            return Err(Error::shape(format!(
                "batch norm has {} channels, input has {}",
                self.channels(),
                dims[1]
            )));
        }
        Ok(dims)
    }

    fn batch_stats(&self, x: &Tensor<T>) -> Result<Stats> {
        let [n, c, h, w] = self.check_input(x)?;
        let count = n * h * w;
        if count < 2 {
            return Err(Error::DegenerateBatch(format!(
                "batch norm needs at least 2 values per channel in train mode, got {count}"
            )));
        }
        let hw = h * w;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ch in 0..c {
            let lanes = || (0..n).flat_map(move |i| x.data()[(i * c + ch) * hw..][..hw].iter());
            let m = lanes().map(|v| v.as_f64()).sum::<f64>() / count as f64;
            let v = lanes().map(|v| (v.as_f64() - m).powi(2)).sum::<f64>() / count as f64;
            mean[ch] = m;
            var[ch] = v;
        }
        Ok(Stats { mean, var })
    }

    /// Normalize with explicit per-channel statistics.
    fn apply(&self, x: &Tensor<T>, mean: &[f64], var: &[f64]) -> Result<Tensor<T>> {
        let [_, c, h, w] = self.check_input(x)?;
        let hw = h * w;
        let mut out = x.clone();
        for (block_idx, block) in out.data_mut().chunks_exact_mut(hw).enumerate() {
            let ch = block_idx % c;
            let istd = 1.0 / (var[ch] + self.epsilon).sqrt();
            let scale = T::of(self.gamma.data()[ch].as_f64() * istd);
            let shift = T::of(
                self.beta.data()[ch].as_f64() - self.gamma.data()[ch].as_f64() * mean[ch] * istd,
            );
            for v in block {
                *v = *v * scale + shift;
            }
        }
        Ok(out)
    }

    fn running(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.running_mean.to_f64_vec(),
            self.running_var.to_f64_vec(),
        )
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match mode {
            Mode::Eval => self.forward_eval(x),
            Mode::Train => {
                let stats = self.batch_stats(x)?;
                let y = self.apply(x, &stats.mean, &stats.var)?;
                let [n, _, h, w] = x.dims::<4>("batch norm input")?;
                let count = (n * h * w) as f64;
                let m = self.momentum;
                for ch in 0..self.channels() {
                    let unbiased = stats.var[ch] * count / (count - 1.0);
                    let rm = &mut self.running_mean.data_mut()[ch];
                    *rm = T::of((1.0 - m) * rm.as_f64() + m * stats.mean[ch]);
                    let rv = &mut self.running_var.data_mut()[ch];
                    *rv = T::of((1.0 - m) * rv.as_f64() + m * unbiased);
                }
                Ok(y)
            }
        }
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (mean, var) = self.running();
        self.apply(x, &mean, &var)
    }

    /// Exact gradient of [`forward`](Self::forward) in the given mode. In
    /// train mode the batch statistics are recomputed from `x`, so `x` must
    /// be the batch that was normalized.
    pub fn backward(
        &self,
        x: &Tensor<T>,
        upstream: &Tensor<T>,
        mode: Mode,
    ) -> Result<BatchNormGrads<T>> {
        let [n, c, h, w] = self.check_input(x)?;
        if upstream.shape() != x.shape() {
            return Err(Error::shape(format!(
                "batch norm upstream {:?} does not match input {:?}",
                upstream.shape(),
                x.shape()
            )));
        }
        let (mean, var) = match mode {
            Mode::Train => {
                let s = self.batch_stats(x)?;
                (s.mean, s.var)
            }
            Mode::Eval => self.running(),
        };
        let hw = h * w;
        let count = (n * hw) as f64;
        let xd = x.data();
        let ud = upstream.data();
        let mut dx = vec![T::zero(); x.len()];
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];

        for ch in 0..c {
            let istd = 1.0 / (var[ch] + self.epsilon).sqrt();
            let gamma = self.gamma.data()[ch].as_f64();
            let blocks = (0..n).map(|i| (i * c + ch) * hw);
            let mut sum_up = 0.0;
            let mut sum_up_xhat = 0.0;
            for base in blocks.clone() {
                for j in base..base + hw {
                    let u = ud[j].as_f64();
                    sum_up += u;
                    sum_up_xhat += u * (xd[j].as_f64() - mean[ch]) * istd;
                }
            }
            dbeta[ch] = T::of(sum_up);
            dgamma[ch] = T::of(sum_up_xhat);
            for base in blocks {
                for j in base..base + hw {
                    let u = ud[j].as_f64();
                    let g = match mode {
                        Mode::Eval => gamma * istd * u,
                        Mode::Train => {
                            let xhat = (xd[j].as_f64() - mean[ch]) * istd;
                            gamma * istd / count * (count * u - sum_up - xhat * sum_up_xhat)
                        }
                    };
                    dx[j] = T::of(g);
                }
            }
        }

        Ok(BatchNormGrads {
            input: Tensor::from_vec(x.shape(), dx)?,
            gamma: Tensor::from_vec(&[c], dgamma)?,
            beta: Tensor::from_vec(&[c], dbeta)?,
        })
    }
}
