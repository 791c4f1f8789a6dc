use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::Scalar;

/// A named dense parameter array (row-major `rows × cols`) with its gradient accumulator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param<F> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<F>,
    #[serde(skip)]
    pub grad: Vec<F>,
}

impl<F: Scalar> Param<F> {
    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Param {
            name: name.into(),
            rows,
            cols,
            values: vec![F::zero(); rows * cols],
            grad: vec![F::zero(); rows * cols],
        }
    }

    /// Uniform initialization in `[-scale, scale)`.
    pub fn uniform<R: Rng + ?Sized>(
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::zeros(name, rows, cols);
        for v in &mut p.values {
            *v = F::lit(rng.random_range(-scale..scale));
        }
        p
    }

    pub fn from_values(name: impl Into<String>, rows: usize, cols: usize, values: Vec<F>) -> Self {
        assert_eq!(values.len(), rows * cols, "param shape");
        Param {
            name: name.into(),
            rows,
            cols,
            grad: vec![F::zero(); values.len()],
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> F {
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: F) {
        self.values[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    /// Resizes the accumulator if needed (e.g. after deserialization) and zeroes it.
    pub fn zero_grad(&mut self) {
        if self.grad.len() != self.values.len() {
            self.grad = vec![F::zero(); self.values.len()];
        } else {
            self.grad.iter_mut().for_each(|g| *g = F::zero());
        }
    }

    pub fn fill(&mut self, v: F) {
        self.values.iter_mut().for_each(|x| *x = v);
    }
}

/// Anything that owns an ordered list of parameters.
///
/// The order returned by [`params`](ParamStore::params) and
/// [`params_mut`](ParamStore::params_mut) must agree and stay fixed for the
/// lifetime of the value; optimizers key their state on it.
pub trait ParamStore<F: Scalar> {
    fn params(&self) -> Vec<&Param<F>>;
    fn params_mut(&mut self) -> Vec<&mut Param<F>>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn grad_is_zero(&self) -> bool {
        self.params()
            .iter()
            .all(|p| p.grad.iter().all(|g| g.is_zero()))
    }

    fn grad_is_finite(&self) -> bool {
        self.params()
            .iter()
            .all(|p| p.grad.iter().all(|g| g.is_finite()))
    }

    fn num_values(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Concatenated gradients in parameter order.
    fn flat_grad(&self) -> Vec<F> {
        self.params()
            .iter()
            .flat_map(|p| p.grad.iter().copied())
            .collect()
    }

    /// Concatenated values in parameter order.
    fn flat_values(&self) -> Vec<F> {
        self.params()
            .iter()
            .flat_map(|p| p.values.iter().copied())
            .collect()
    }
}

impl<F: Scalar> ParamStore<F> for Vec<Param<F>> {
    fn params(&self) -> Vec<&Param<F>> {
        self.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        self.iter_mut().collect()
    }
}
