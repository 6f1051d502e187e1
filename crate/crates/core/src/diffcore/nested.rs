//! Nested first-order dual numbers.
//!
//! A depth-`n` value is the pair `(primal, tangent)` of two depth-`n-1`
//! values, flattened into `2^n` coefficients: the first half is the primal,
//! the second half the tangent, recursively. Equivalently, coefficient `S`
//! (a bitmask) multiplies `Π_{i∈S} ε_i` with `ε_i² = 0`. Seeding every `ε_i`
//! with the same direction makes coefficient `2^k - 1` the k-th derivative.
//!
//! Products are subset convolutions costing `3^n`, which is the point: this
//! is the exact but exponential reference the n-TP pass is measured against.

use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

/// Depth limit for [`nested_derivative`]: `2^20` coefficients (8 MiB) per
/// intermediate value.
pub const DEFAULT_MAX_DEPTH: usize = 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DualError {
    #[error("nesting depth {requested} exceeds the limit of {limit}")]
    DepthLimit { requested: usize, limit: usize },
}

/// `out[S] = Σ_{T⊆S} a[T]·b[S∖T]`.
pub fn subset_mul(a: &[f64], b: &[f64], out: &mut [f64]) {
    debug_assert!(a.len() == b.len() && a.len() == out.len());
    for s in 0..out.len() {
        let mut acc = 0.0;
        let mut t = s;
        loop {
            acc += a[t] * b[s ^ t];
            if t == 0 {
                break;
            }
            t = (t - 1) & s;
        }
        out[s] = acc;
    }
}

/// Adjoint of [`subset_mul`] with respect to `a`:
/// `adj_a[T] += Σ_{S⊇T} adj_out[S]·b[S∖T]`.
pub fn subset_mul_adjoint(adj_out: &[f64], b: &[f64], adj_a: &mut [f64]) {
    for s in 0..adj_out.len() {
        let g = adj_out[s];
        if g == 0.0 {
            continue;
        }
        let mut t = s;
        loop {
            adj_a[t] += g * b[s ^ t];
            if t == 0 {
                break;
            }
            t = (t - 1) & s;
        }
    }
}

/// `out = tanh(a)` by `tanh(p + t·ε) = tanh(p) + (1 - tanh(p)²)·t·ε`,
/// applied recursively on the primal half. `scratch` must hold at least
/// `a.len()` values.
pub fn tanh_into(a: &[f64], out: &mut [f64], scratch: &mut [f64]) {
    let len = a.len();
    if len == 1 {
        out[0] = a[0].tanh();
        return;
    }
    let h = len / 2;
    let (lo, hi) = out.split_at_mut(h);
    tanh_into(&a[..h], lo, scratch);
    // 1 - lo² at depth n-1
    let sq = &mut scratch[..h];
    subset_mul(lo, lo, sq);
    for v in sq.iter_mut() {
        *v = -*v;
    }
    sq[0] += 1.0;
    subset_mul(sq, &a[h..], hi);
}

/// A nested dual number of runtime depth.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedDual {
    depth: usize,
    coeffs: Vec<f64>,
}

impl NestedDual {
    pub fn constant(c: f64, depth: usize) -> Self {
        let mut coeffs = vec![0.0; 1 << depth];
        coeffs[0] = c;
        Self { depth, coeffs }
    }

    /// The independent variable `x` with every tangent slot seeded to 1.
    pub fn variable(x: f64, depth: usize) -> Self {
        let mut d = Self::constant(x, depth);
        for i in 0..depth {
            d.coeffs[1 << i] = 1.0;
        }
        d
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn primal(&self) -> f64 {
        self.coeffs[0]
    }

    /// k-th derivative along the seeded direction, `k ≤ depth`.
    pub fn derivative(&self, k: usize) -> f64 {
        assert!(k <= self.depth);
        self.coeffs[(1 << k) - 1]
    }

    /// Same-depth constant.
    pub fn lift(&self, c: f64) -> Self {
        Self::constant(c, self.depth)
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            depth: self.depth,
            coeffs: self.coeffs.iter().map(|v| v * c).collect(),
        }
    }

    pub fn add_scalar(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.coeffs[0] += c;
        out
    }

    pub fn tanh(&self) -> Self {
        let mut out = vec![0.0; self.coeffs.len()];
        let mut scratch = vec![0.0; self.coeffs.len()];
        tanh_into(&self.coeffs, &mut out, &mut scratch);
        Self {
            depth: self.depth,
            coeffs: out,
        }
    }

    pub fn powi(&self, k: u32) -> Self {
        let mut acc = self.lift(1.0);
        for _ in 0..k {
            acc = &acc * self;
        }
        acc
    }

    fn zip(&self, o: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.depth, o.depth, "nesting depth mismatch");
        Self {
            depth: self.depth,
            coeffs: self.coeffs.iter().zip(&o.coeffs).map(|(a, b)| f(*a, *b)).collect(),
        }
    }
}

impl Add for &NestedDual {
    type Output = NestedDual;
    fn add(self, o: &NestedDual) -> NestedDual {
        self.zip(o, |a, b| a + b)
    }
}

impl Sub for &NestedDual {
    type Output = NestedDual;
    fn sub(self, o: &NestedDual) -> NestedDual {
        self.zip(o, |a, b| a - b)
    }
}

impl Mul for &NestedDual {
    type Output = NestedDual;
    fn mul(self, o: &NestedDual) -> NestedDual {
        assert_eq!(self.depth, o.depth, "nesting depth mismatch");
        let mut coeffs = vec![0.0; self.coeffs.len()];
        subset_mul(&self.coeffs, &o.coeffs, &mut coeffs);
        NestedDual {
            depth: self.depth,
            coeffs,
        }
    }
}

impl Neg for &NestedDual {
    type Output = NestedDual;
    fn neg(self) -> NestedDual {
        self.scale(-1.0)
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident) => {
        impl $tr for NestedDual {
            type Output = NestedDual;
            fn $m(self, o: NestedDual) -> NestedDual {
                $tr::$m(&self, &o)
            }
        }
        impl $tr<&NestedDual> for NestedDual {
            type Output = NestedDual;
            fn $m(self, o: &NestedDual) -> NestedDual {
                $tr::$m(&self, o)
            }
        }
        impl $tr<NestedDual> for &NestedDual {
            type Output = NestedDual;
            fn $m(self, o: NestedDual) -> NestedDual {
                $tr::$m(self, &o)
            }
        }
    };
}

forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);

/// Scalar arithmetic closed under the operations a dense tanh network and
/// the residual closures need. Implemented by `f64` and [`NestedDual`] so the
/// same closure can be evaluated plainly or differentiated.
pub trait Analytic: Clone {
    fn lift(&self, c: f64) -> Self;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn scale(&self, c: f64) -> Self;
    fn add_scalar(&self, c: f64) -> Self;
    fn tanh(&self) -> Self;
    fn primal(&self) -> f64;
}

impl Analytic for f64 {
    fn lift(&self, c: f64) -> Self {
        c
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn scale(&self, c: f64) -> Self {
        self * c
    }
    fn add_scalar(&self, c: f64) -> Self {
        self + c
    }
    fn tanh(&self) -> Self {
        f64::tanh(*self)
    }
    fn primal(&self) -> f64 {
        *self
    }
}

impl Analytic for NestedDual {
    fn lift(&self, c: f64) -> Self {
        NestedDual::lift(self, c)
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn scale(&self, c: f64) -> Self {
        NestedDual::scale(self, c)
    }
    fn add_scalar(&self, c: f64) -> Self {
        NestedDual::add_scalar(self, c)
    }
    fn tanh(&self) -> Self {
        NestedDual::tanh(self)
    }
    fn primal(&self) -> f64 {
        self.coeffs[0]
    }
}

/// `dⁿf/dxⁿ` at `x` by n-fold nesting of first-order duals.
pub fn nested_derivative<F>(f: F, x: f64, n: usize) -> Result<f64, DualError>
where
    F: Fn(&NestedDual) -> NestedDual,
{
    Ok(*nested_derivatives(f, x, n)?.last().unwrap())
}

/// `[f(x), f'(x), …, f^(n)(x)]` from one depth-`n` evaluation.
pub fn nested_derivatives<F>(f: F, x: f64, n: usize) -> Result<Vec<f64>, DualError>
where
    F: Fn(&NestedDual) -> NestedDual,
{
    nested_derivatives_with_limit(f, x, n, DEFAULT_MAX_DEPTH)
}

pub fn nested_derivatives_with_limit<F>(
    f: F,
    x: f64,
    n: usize,
    limit: usize,
) -> Result<Vec<f64>, DualError>
where
    F: Fn(&NestedDual) -> NestedDual,
{
    if n > limit {
        return Err(DualError::DepthLimit {
            requested: n,
            limit,
        });
    }
    let y = f(&NestedDual::variable(x, n));
    Ok((0..=n).map(|k| y.derivative(k)).collect())
}
