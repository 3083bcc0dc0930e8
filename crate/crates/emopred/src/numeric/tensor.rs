//! Dense row-major tensors over f32 or f64.
//!
//! Storage is `Arc`-backed: clones are reference bumps, and in-place
//! mutation copies on write. That keeps the autograd tape cheap (backward
//! closures capture operand tensors by clone) without giving up plain
//! mutable updates in the optimizer.

use std::fmt::{Debug, Display};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numeric::rng::Prng;

/// Element type of the engine: f32 for training/inference, f64 for
/// finite-difference gradient verification.
pub trait Scalar:
    num_traits::Float + num_traits::NumAssign + Debug + Display + Default + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F: Scalar> {
    shape: Vec<usize>,
    data: Arc<Vec<F>>,
}

impl<F: Scalar> Tensor<F> {
    pub fn from_vec(shape: &[usize], data: Vec<F>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} wants {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![F::zero(); numel]),
        }
    }

    pub fn filled(shape: &[usize], v: F) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![v; numel]),
        }
    }

    pub fn scalar(v: F) -> Self {
        Tensor {
            shape: vec![1],
            data: Arc::new(vec![v]),
        }
    }

    /// Truncated-Gaussian fill, the standard transformer weight init.
    pub fn randn_truncated(shape: &[usize], std: f64, trunc: f64, rng: &mut Prng) -> Self {
        let numel = shape.iter().product();
        let data = (0..numel)
            .map(|_| F::from_f64(rng.truncated_normal(std, trunc)))
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rows of a matrix, or 1 for a vector.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    /// Columns of a matrix, or the length of a vector.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&0)
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [F] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn row(&self, i: usize) -> &[F] {
        let n = self.cols();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn item(&self) -> F {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
        }
    }

    pub fn zip_map(&self, other: &Tensor<F>, f: impl Fn(F, F) -> F) -> Result<Tensor<F>> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "elementwise op on {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data: Arc::new(data),
        })
    }

    pub fn add(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn add_assign(&mut self, other: &Tensor<F>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "add_assign on {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let dst = Arc::make_mut(&mut self.data);
        for (d, s) in dst.iter_mut().zip(other.data.iter()) {
            *d += *s;
        }
        Ok(())
    }

    pub fn scale(&self, c: F) -> Tensor<F> {
        self.map(|v| v * c)
    }

    pub fn fill(&mut self, v: F) {
        for d in Arc::make_mut(&mut self.data).iter_mut() {
            *d = v;
        }
    }

    pub fn sum(&self) -> F {
        self.data.iter().fold(F::zero(), |acc, &v| acc + v)
    }

    pub fn transpose(&self) -> Result<Tensor<F>> {
        if !self.is_matrix() {
            return Err(Error::Shape(format!("transpose of {:?}", self.shape)));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::from_vec(&[n, m], out)
    }

    /// Matrix product `self . other`.
    pub fn matmul(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        if !self.is_matrix() || !other.is_matrix() || self.shape[1] != other.shape[0] {
            return Err(Error::Shape(format!(
                "matmul of {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let a = &self.data;
        let b = &other.data;
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            let crow = &mut out[i * n..(i + 1) * n];
            for (kk, &aik) in arow.iter().enumerate() {
                let brow = &b[kk * n..(kk + 1) * n];
                for (c, &bv) in crow.iter_mut().zip(brow.iter()) {
                    *c += aik * bv;
                }
            }
        }
        Tensor::from_vec(&[m, n], out)
    }

    /// `self . otherᵀ` without materializing the transpose.
    pub fn matmul_bt(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        if !self.is_matrix() || !other.is_matrix() || self.shape[1] != other.shape[1] {
            return Err(Error::Shape(format!(
                "matmul_bt of {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[0]);
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &other.data[j * k..(j + 1) * k];
                let mut acc = F::zero();
                for (&av, &bv) in arow.iter().zip(brow.iter()) {
                    acc += av * bv;
                }
                out[i * n + j] = acc;
            }
        }
        Tensor::from_vec(&[m, n], out)
    }

    /// `selfᵀ . other` without materializing the transpose.
    pub fn matmul_ta(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        if !self.is_matrix() || !other.is_matrix() || self.shape[0] != other.shape[0] {
            return Err(Error::Shape(format!(
                "matmul_ta of {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let (k, m, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![F::zero(); m * n];
        for kk in 0..k {
            let arow = &self.data[kk * m..(kk + 1) * m];
            let brow = &other.data[kk * n..(kk + 1) * n];
            for (i, &av) in arow.iter().enumerate() {
                let crow = &mut out[i * n..(i + 1) * n];
                for (c, &bv) in crow.iter_mut().zip(brow.iter()) {
                    *c += av * bv;
                }
            }
        }
        Tensor::from_vec(&[m, n], out)
    }

    /// Lossy element cast, used only by verification code that lifts f32
    /// models into f64.
    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| G::from_f64(v.to_f64())).collect()),
        }
    }
}

/// A named weight tensor paired with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Parameter<F: Scalar> {
    pub name: String,
    pub value: Tensor<F>,
    pub grad: Tensor<F>,
}

impl<F: Scalar> Parameter<F> {
    pub fn new(name: impl Into<String>, value: Tensor<F>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }

    pub fn accumulate_grad(&mut self, g: &Tensor<F>) -> Result<()> {
        self.grad.add_assign(g)
    }
}
