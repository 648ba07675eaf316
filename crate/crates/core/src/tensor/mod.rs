//! Dense row-major tensors.
//!
//! Image tensors use NCHW order. Values are immutable once an operation
//! returns; every reduction runs in a fixed sequential order so results are
//! bitwise reproducible.

mod real;
mod rng;

pub use real::{DType, Real};
pub use rng::SeededRng;

use crate::error::{Error, Result};

/// Initial contents for [`Tensor::create`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fill {
    Constant(f64),
    Normal { mean: f64, std: f64 },
    Uniform { lo: f64, hi: f64 },
}

/// Positionwise binary/scalar operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn validate_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::shape("tensor needs at least one axis"));
    }
    if let Some(pos) = shape.iter().position(|&d| d == 0) {
        return Err(Error::shape(format!(
            "extent {pos} of shape {shape:?} is zero"
        )));
    }
    Ok(shape.iter().product())
}

impl<T: Real> Tensor<T> {
    pub fn create(shape: &[usize], fill: Fill, rng: Option<&mut SeededRng>) -> Result<Self> {
        let len = validate_shape(shape)?;
        let data = match (fill, rng) {
            (Fill::Constant(c), _) => vec![T::of(c); len],
            (Fill::Normal { mean, std }, Some(rng)) => {
                (0..len).map(|_| T::of(rng.normal(mean, std))).collect()
            }
            (Fill::Uniform { lo, hi }, Some(rng)) => {
                (0..len).map(|_| T::of(rng.uniform(lo, hi))).collect()
            }
            (_, None) => {
                return Err(Error::State("random fill requires an rng".into()));
            }
        };
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len = validate_shape(shape)?;
        if len != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} holds {len} values but {} were given",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&x| T::of(x)).collect())
    }

    /// All-zero tensor. Panics on a zero extent; use [`Tensor::create`] for
    /// untrusted shapes.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::create(shape, Fill::Constant(0.0), None).expect("valid shape")
    }

    pub fn zeros_like(other: &Tensor<T>) -> Self {
        Tensor {
            shape: other.shape.clone(),
            data: vec![T::zero(); other.data.len()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }

    /// Shape as a fixed-rank array, or a shape error naming `what`.
    pub fn dims<const R: usize>(&self, what: &str) -> Result<[usize; R]> {
        self.shape.as_slice().try_into().map_err(|_| {
            Error::shape(format!(
                "{what}: expected rank {R}, got shape {:?}",
                self.shape
            ))
        })
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len = validate_shape(shape)?;
        if len != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "elementwise operands differ: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn elementwise(&self, op: Elementwise, other: &Tensor<T>) -> Result<Self> {
        match op {
            Elementwise::Add => self.zip_with(other, |a, b| a + b),
            Elementwise::Sub => self.zip_with(other, |a, b| a - b),
            Elementwise::Mul => self.zip_with(other, |a, b| a * b),
        }
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Self> {
        self.elementwise(Elementwise::Add, other)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Self> {
        self.elementwise(Elementwise::Sub, other)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Self> {
        self.elementwise(Elementwise::Mul, other)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    pub fn max_scalar(&self, s: T) -> Self {
        self.map(|x| if x > s { x } else { s })
    }

    /// `self += alpha * other`, shapes must agree.
    pub fn axpy(&mut self, alpha: T, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "axpy operands differ: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + alpha * b;
        }
        Ok(())
    }

    pub fn matmul(&self, other: &Tensor<T>) -> Result<Self> {
        let [m, k] = self.dims::<2>("matmul lhs")?;
        let [k2, n] = other.dims::<2>("matmul rhs")?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner extents differ: {m}x{k} * {k2}x{n}"
            )));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            &self.data,
            k,
            1,
            &other.data,
            n,
            1,
            T::zero(),
            &mut out,
            n,
            1,
        );
        Tensor::from_vec(&[m, n], out)
    }

    /// Reduce over `axis`, or over everything when `axis` is `None` (result
    /// shape `[1]`). The reduced axis is removed; a rank-1 input reduced
    /// along axis 0 yields shape `[1]`.
    pub fn reduce(&self, op: Reduction, axis: Option<usize>) -> Result<Self> {
        let Some(axis) = axis else {
            let v = fold(op, self.data.iter().copied());
            return Tensor::from_vec(&[1], vec![v]);
        };
        let (outer, extent, inner) = self.split_axis(axis)?;
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * extent * inner + i;
                out.push(fold(op, (0..extent).map(|e| self.data[base + e * inner])));
            }
        }
        let mut shape: Vec<usize> = self.shape.clone();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Tensor::from_vec(&shape, out)
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &x| acc + x)
    }

    /// Flat index of the largest value; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax_slice(&self.data)
    }

    /// Per-slice argmax along `axis`, laid out over the remaining axes in
    /// row-major order. Ties go to the lowest index.
    pub fn argmax_axis(&self, axis: usize) -> Result<Vec<usize>> {
        let (outer, extent, inner) = self.split_axis(axis)?;
        let mut out = Vec::with_capacity(outer * inner);
        let mut lane = Vec::with_capacity(extent);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * extent * inner + i;
                lane.clear();
                lane.extend((0..extent).map(|e| self.data[base + e * inner]));
                out.push(argmax_slice(&lane));
            }
        }
        Ok(out)
    }

    /// Numeric-error if any element is NaN or infinite.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|x| !x.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Numeric(format!(
                "{what}: non-finite value {} at flat index {i}",
                self.data[i]
            ))),
        }
    }

    fn split_axis(&self, axis: usize) -> Result<(usize, usize, usize)> {
        if axis >= self.shape.len() {
            return Err(Error::shape(format!(
                "axis {axis} out of range for shape {:?}",
                self.shape
            )));
        }
        let outer = self.shape[..axis].iter().product();
        let inner = self.shape[axis + 1..].iter().product();
        Ok((outer, self.shape[axis], inner))
    }
}

fn fold<T: Real>(op: Reduction, values: impl Iterator<Item = T>) -> T {
    match op {
        Reduction::Sum => values.fold(T::zero(), |a, x| a + x),
        Reduction::Mean => {
            let (s, n) = values.fold((T::zero(), 0usize), |(a, n), x| (a + x, n + 1));
            s / T::of(n as f64)
        }
        Reduction::Max => values.fold(T::neg_infinity(), |a, x| if x > a { x } else { a }),
    }
}

pub fn argmax_slice<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate().skip(1) {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}
