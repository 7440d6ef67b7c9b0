//! Second-order scalar jets: value, gradient, and symmetric Hessian of a
//! scalar quantity with respect to 2 or 3 spatial coordinates.
//!
//! Jets propagate through arithmetic by the product and chain rules, so a
//! closed-form expression written in jet arithmetic yields its exact first
//! and second derivatives alongside the value. The network evaluator, the
//! manufactured problem oracles, and the hard-boundary ansatz wrappers all
//! share this type.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

/// Maximum supported spatial dimension.
pub const MAX_DIM: usize = 3;

/// Number of packed upper-triangle Hessian entries for dimension `d`.
#[inline]
pub fn tri_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Packed index of the symmetric Hessian entry `(i, j)` with `i <= j`.
#[inline]
pub fn tri_index(i: usize, j: usize, d: usize) -> usize {
    debug_assert!(i <= j && j < d);
    i * (2 * d - i + 1) / 2 + (j - i)
}

/// Value, gradient, and packed upper-triangle Hessian at a point.
#[derive(Clone, Copy, PartialEq)]
pub struct Jet2 {
    dim: usize,
    pub value: f64,
    grad: [f64; MAX_DIM],
    hess: [f64; 6],
}

impl fmt::Debug for Jet2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Jet2")
            .field("value", &self.value)
            .field("grad", &self.gradient())
            .field("hess", &self.hess_packed())
            .finish()
    }
}

impl Jet2 {
    /// A constant: zero gradient and Hessian.
    pub fn constant(value: f64, dim: usize) -> Self {
        assert!(dim >= 1 && dim <= MAX_DIM, "jet dimension must be 1..=3");
        Jet2 {
            dim,
            value,
            grad: [0.0; MAX_DIM],
            hess: [0.0; 6],
        }
    }

    /// The coordinate variable `x_axis` seeded with unit derivative.
    pub fn coord(value: f64, axis: usize, dim: usize) -> Self {
        let mut jet = Jet2::constant(value, dim);
        assert!(axis < dim, "coordinate axis out of range");
        jet.grad[axis] = 1.0;
        jet
    }

    /// Builds a jet from explicit parts; `hess` is the packed upper triangle.
    pub fn from_parts(dim: usize, value: f64, grad: &[f64], hess: &[f64]) -> Self {
        assert!(dim >= 1 && dim <= MAX_DIM);
        assert_eq!(grad.len(), dim);
        assert_eq!(hess.len(), tri_len(dim));
        let mut jet = Jet2::constant(value, dim);
        jet.grad[..dim].copy_from_slice(grad);
        jet.hess[..hess.len()].copy_from_slice(hess);
        jet
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gradient(&self) -> &[f64] {
        &self.grad[..self.dim]
    }

    /// Packed upper-triangle Hessian entries in row order
    /// `(0,0), (0,1), .., (1,1), ..`.
    pub fn hess_packed(&self) -> &[f64] {
        &self.hess[..tri_len(self.dim)]
    }

    /// Hessian entry `(i, j)`; symmetric, so argument order is free.
    pub fn hessian(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.hess[tri_index(i, j, self.dim)]
    }

    /// Trace of the Hessian.
    pub fn laplacian(&self) -> f64 {
        (0..self.dim).map(|i| self.hessian(i, i)).sum()
    }

    /// Squared Euclidean norm of the gradient.
    pub fn grad_norm_sq(&self) -> f64 {
        self.gradient().iter().map(|g| g * g).sum()
    }

    /// The quadratic form `grad^T H grad`.
    pub fn grad_hess_grad(&self) -> f64 {
        let d = self.dim;
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                acc += self.grad[i] * self.hessian(i, j) * self.grad[j];
            }
        }
        acc
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.gradient().iter().all(|v| v.is_finite())
            && self.hess_packed().iter().all(|v| v.is_finite())
    }

    /// Composition with a scalar function given its first two derivatives
    /// at `self.value`.
    pub fn chain(&self, f: f64, df: f64, d2f: f64) -> Self {
        let d = self.dim;
        let mut out = Jet2::constant(f, d);
        for i in 0..d {
            out.grad[i] = df * self.grad[i];
        }
        for i in 0..d {
            for j in i..d {
                out.hess[tri_index(i, j, d)] =
                    df * self.hess[tri_index(i, j, d)] + d2f * self.grad[i] * self.grad[j];
            }
        }
        out
    }

    pub fn sin(&self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.chain(s, c, -s)
    }

    pub fn cos(&self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.chain(c, -s, -c)
    }

    pub fn exp(&self) -> Self {
        let e = self.value.exp();
        self.chain(e, e, e)
    }

    pub fn powi(&self, n: i32) -> Self {
        let v = self.value;
        self.chain(
            v.powi(n),
            f64::from(n) * v.powi(n - 1),
            f64::from(n * (n - 1)) * v.powi(n - 2),
        )
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut out = *self;
        out.value *= c;
        for g in &mut out.grad {
            *g *= c;
        }
        for h in &mut out.hess {
            *h *= c;
        }
        out
    }

    pub fn shift(&self, c: f64) -> Self {
        let mut out = *self;
        out.value += c;
        out
    }
}

impl Add for Jet2 {
    type Output = Jet2;
    fn add(self, rhs: Jet2) -> Jet2 {
        debug_assert_eq!(self.dim, rhs.dim);
        let mut out = self;
        out.value += rhs.value;
        for i in 0..MAX_DIM {
            out.grad[i] += rhs.grad[i];
        }
        for i in 0..6 {
            out.hess[i] += rhs.hess[i];
        }
        out
    }
}

impl Sub for Jet2 {
    type Output = Jet2;
    fn sub(self, rhs: Jet2) -> Jet2 {
        self + (-rhs)
    }
}

impl Neg for Jet2 {
    type Output = Jet2;
    fn neg(self) -> Jet2 {
        self.scale(-1.0)
    }
}

impl Mul for Jet2 {
    type Output = Jet2;
    fn mul(self, rhs: Jet2) -> Jet2 {
        debug_assert_eq!(self.dim, rhs.dim);
        let d = self.dim;
        let mut out = Jet2::constant(self.value * rhs.value, d);
        for i in 0..d {
            out.grad[i] = self.grad[i] * rhs.value + self.value * rhs.grad[i];
        }
        for i in 0..d {
            for j in i..d {
                let k = tri_index(i, j, d);
                out.hess[k] = self.hess[k] * rhs.value
                    + self.grad[i] * rhs.grad[j]
                    + self.grad[j] * rhs.grad[i]
                    + self.value * rhs.hess[k];
            }
        }
        out
    }
}

/// A closed-form scalar field evaluated with full second-order jets.
#[derive(Clone)]
pub struct JetField {
    dim: usize,
    eval: Arc<dyn Fn(&[f64]) -> Jet2 + Send + Sync>,
}

impl JetField {
    pub fn new(dim: usize, eval: impl Fn(&[f64]) -> Jet2 + Send + Sync + 'static) -> Self {
        JetField {
            dim,
            eval: Arc::new(eval),
        }
    }

    pub fn constant(dim: usize, value: f64) -> Self {
        JetField::new(dim, move |_| Jet2::constant(value, dim))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn jet(&self, x: &[f64]) -> Jet2 {
        debug_assert_eq!(x.len(), self.dim);
        (self.eval)(x)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.jet(x).value
    }

    /// Forgets the derivative information.
    pub fn as_scalar(&self) -> ScalarField {
        let inner = self.clone();
        ScalarField::new(self.dim, move |x| inner.value(x))
    }
}

impl fmt::Debug for JetField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "JetField(dim={})", self.dim)
    }
}

/// A scalar field for which only point values are available (for example a
/// forcing synthesized from jets of an exact solution, whose own derivatives
/// would require third derivatives of the source expression).
#[derive(Clone)]
pub struct ScalarField {
    dim: usize,
    eval: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl ScalarField {
    pub fn new(dim: usize, eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        ScalarField {
            dim,
            eval: Arc::new(eval),
        }
    }

    pub fn constant(dim: usize, value: f64) -> Self {
        ScalarField::new(dim, move |_| value)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        (self.eval)(x)
    }
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScalarField(dim={})", self.dim)
    }
}
