use crate::error::{Error, Result};
use crate::tensor::{Fill, Real, SeededRng, Tensor};

/// Fully connected layer `y = x Wᵀ + b` over `[n, in]` input.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer<T> {
    /// `[out, in]`
    pub weight: Tensor<T>,
    /// `[out]`
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct LinearGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> LinearLayer<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let [out, _] = weight.dims::<2>("linear weight")?;
        if bias.shape() != [out] {
            return Err(Error::shape(format!(
                "linear bias {:?} does not match {out} outputs",
                bias.shape()
            )));
        }
        Ok(LinearLayer { weight, bias })
    }

    pub fn he_normal(inputs: usize, outputs: usize, rng: &mut SeededRng) -> Result<Self> {
        let weight = Tensor::create(
            &[outputs, inputs],
            Fill::Normal {
                mean: 0.0,
                std: (2.0 / inputs as f64).sqrt(),
            },
            Some(rng),
        )?;
        Self::new(weight, Tensor::zeros(&[outputs]))
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<usize> {
        let [n, k] = x.dims::<2>("linear input")?;
        if k != self.inputs() {
            return Err(Error::shape(format!(
                "linear layer expects {} inputs, got {k}",
                self.inputs()
            )));
        }
        Ok(n)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.check_input(x)?;
        let (k, m) = (self.inputs(), self.outputs());
        let mut out: Vec<T> = (0..n)
            .flat_map(|_| self.bias.data().iter().copied())
            .collect();
        T::gemm(
            n,
            k,
            m,
            T::one(),
            x.data(),
            k,
            1,
            self.weight.data(),
            1,
            k,
            T::one(),
            &mut out,
            m,
            1,
        );
        Tensor::from_vec(&[n, m], out)
    }

    pub fn backward(&self, x: &Tensor<T>, upstream: &Tensor<T>) -> Result<LinearGrads<T>> {
        let n = self.check_input(x)?;
        let (k, m) = (self.inputs(), self.outputs());
        if upstream.shape() != [n, m] {
            return Err(Error::shape(format!(
                "linear upstream {:?} does not match output [{n}, {m}]",
                upstream.shape()
            )));
        }
        let up = upstream.data();
        let mut dx = vec![T::zero(); n * k];
        T::gemm(
            n,
            m,
            k,
            T::one(),
            up,
            m,
            1,
            self.weight.data(),
            k,
            1,
            T::zero(),
            &mut dx,
            k,
            1,
        );
        let mut dw = vec![T::zero(); m * k];
        T::gemm(
            m,
            n,
            k,
            T::one(),
            up,
            1,
            m,
            x.data(),
            k,
            1,
            T::zero(),
            &mut dw,
            k,
            1,
        );
        let db = upstream.reduce(crate::tensor::Reduction::Sum, Some(0))?;
        Ok(LinearGrads {
            input: Tensor::from_vec(&[n, k], dx)?,
            weight: Tensor::from_vec(&[m, k], dw)?,
            bias: db,
        })
    }
}
