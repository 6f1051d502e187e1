//! Evaluation contexts shared by the plain, taped and tangent code paths.
//!
//! Every computation that needs derivatives with respect to trainable
//! parameters is written once against [`Arith`]. A context decides what a
//! value is: a bare `f64` ([`Plain`]), a node on a reverse-mode tape
//! ([`crate::diffcore::Tape`]), or a first-order tangent pair ([`TangentCtx`]).
//! The only primitive a context must supply is [`Arith::node`], a value plus
//! its local partial derivatives; everything else is built on top of it.

use super::activation::ActivationKind;

pub trait Arith {
    type V: Copy;

    /// `false` when [`Arith::node`] ignores its partials, letting callers
    /// skip computing them.
    const TRACKS_PARTIALS: bool;

    fn constant(&mut self, c: f64) -> Self::V;

    fn value(&self, v: Self::V) -> f64;

    /// A new value `value` with local partials `∂value/∂parent`.
    fn node(&mut self, value: f64, parents: &[(Self::V, f64)]) -> Self::V;

    fn add(&mut self, a: Self::V, b: Self::V) -> Self::V {
        let v = self.value(a) + self.value(b);
        self.node(v, &[(a, 1.0), (b, 1.0)])
    }

    fn sub(&mut self, a: Self::V, b: Self::V) -> Self::V {
        let v = self.value(a) - self.value(b);
        self.node(v, &[(a, 1.0), (b, -1.0)])
    }

    fn mul(&mut self, a: Self::V, b: Self::V) -> Self::V {
        let (x, y) = (self.value(a), self.value(b));
        self.node(x * y, &[(a, y), (b, x)])
    }

    fn div(&mut self, a: Self::V, b: Self::V) -> Self::V {
        let (x, y) = (self.value(a), self.value(b));
        let q = x / y;
        self.node(q, &[(a, 1.0 / y), (b, -q / y)])
    }

    fn scale(&mut self, c: f64, a: Self::V) -> Self::V {
        let v = c * self.value(a);
        self.node(v, &[(a, c)])
    }

    fn add_const(&mut self, a: Self::V, c: f64) -> Self::V {
        let v = self.value(a) + c;
        self.node(v, &[(a, 1.0)])
    }

    fn square(&mut self, a: Self::V) -> Self::V {
        let x = self.value(a);
        self.node(x * x, &[(a, 2.0 * x)])
    }

    fn powi(&mut self, a: Self::V, k: i32) -> Self::V {
        let x = self.value(a);
        let d = if k == 0 { 0.0 } else { k as f64 * x.powi(k - 1) };
        self.node(x.powi(k), &[(a, d)])
    }

    /// `σ^(order)(a)`.
    fn activation(&mut self, kind: ActivationKind, a: Self::V, order: usize) -> Self::V {
        let mut s = [0.0; super::activation::MAX_ACTIVATION_ORDER + 1];
        kind.stack_into(self.value(a), &mut s[..order + 2]);
        self.node(s[order], &[(a, s[order + 1])])
    }

    fn logistic(&mut self, a: Self::V) -> Self::V {
        let s = logistic(self.value(a));
        self.node(s, &[(a, s * (1.0 - s))])
    }

    /// `Σ_i w_i·x_i`, accumulated in increasing `i` starting from `0.0`.
    fn dot(&mut self, w: &[Self::V], x: &[Self::V]) -> Self::V {
        debug_assert_eq!(w.len(), x.len());
        let mut acc = 0.0;
        let mut parents = Vec::with_capacity(2 * w.len());
        for (&wi, &xi) in w.iter().zip(x) {
            let (wv, xv) = (self.value(wi), self.value(xi));
            acc += wv * xv;
            parents.push((wi, xv));
            parents.push((xi, wv));
        }
        self.node(acc, &parents)
    }

    /// `Σ_i x_i` in increasing `i`.
    fn sum(&mut self, xs: &[Self::V]) -> Self::V {
        let mut acc = 0.0;
        let mut parents = Vec::with_capacity(xs.len());
        for &x in xs {
            acc += self.value(x);
            parents.push((x, 1.0));
        }
        self.node(acc, &parents)
    }
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Dot product in the fixed accumulation order every context uses.
#[inline]
pub(crate) fn dot_f64(w: &[f64], x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (a, b) in w.iter().zip(x) {
        acc += a * b;
    }
    acc
}

/// Plain `f64` evaluation; partials are discarded.
#[derive(Debug, Default, Clone, Copy)]
pub struct Plain;

impl Arith for Plain {
    type V = f64;
    const TRACKS_PARTIALS: bool = false;

    #[inline]
    fn constant(&mut self, c: f64) -> f64 {
        c
    }

    #[inline]
    fn value(&self, v: f64) -> f64 {
        v
    }

    #[inline]
    fn node(&mut self, value: f64, _parents: &[(f64, f64)]) -> f64 {
        value
    }

    #[inline]
    fn dot(&mut self, w: &[f64], x: &[f64]) -> f64 {
        dot_f64(w, x)
    }

    fn sum(&mut self, xs: &[f64]) -> f64 {
        xs.iter().fold(0.0, |acc, x| acc + x)
    }
}

/// A value with one directional derivative attached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tangent {
    pub v: f64,
    pub d: f64,
}

impl Tangent {
    pub fn new(v: f64, d: f64) -> Self {
        Self { v, d }
    }
}

/// Forward-mode context: one sweep yields a value and its derivative along
/// the direction the inputs were seeded with.
#[derive(Debug, Default, Clone, Copy)]
pub struct TangentCtx;

impl Arith for TangentCtx {
    type V = Tangent;
    const TRACKS_PARTIALS: bool = true;

    fn constant(&mut self, c: f64) -> Tangent {
        Tangent { v: c, d: 0.0 }
    }

    #[inline]
    fn value(&self, v: Tangent) -> f64 {
        v.v
    }

    fn node(&mut self, value: f64, parents: &[(Tangent, f64)]) -> Tangent {
        let d = parents.iter().fold(0.0, |acc, (p, w)| acc + w * p.d);
        Tangent { v: value, d }
    }

    fn dot(&mut self, w: &[Tangent], x: &[Tangent]) -> Tangent {
        let mut v = 0.0;
        let mut d = 0.0;
        for (a, b) in w.iter().zip(x) {
            v += a.v * b.v;
            d += a.d * b.v + a.v * b.d;
        }
        Tangent { v, d }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly<C: Arith>(ctx: &mut C, x: C::V) -> C::V {
        // (3x² + 1) / x
        let sq = ctx.square(x);
        let t = ctx.scale(3.0, sq);
        let t = ctx.add_const(t, 1.0);
        ctx.div(t, x)
    }

    #[test]
    fn tangent_matches_analytic_derivative() {
        let mut ctx = TangentCtx;
        let y = poly(&mut ctx, Tangent::new(2.0, 1.0));
        assert!((y.v - 6.5).abs() < 1e-15);
        // d/dx (3x + 1/x) = 3 - 1/x²
        assert!((y.d - 2.75).abs() < 1e-15);
    }

    #[test]
    fn plain_dot_uses_fixed_order() {
        let w = [1e16, 1.0, -1e16];
        let x = [1.0, 1.0, 1.0];
        // left-to-right: (1e16 + 1) - 1e16 = 0 in f64
        assert_eq!(Plain.dot(&w, &x), 0.0);
        let mut t = TangentCtx;
        let tw: Vec<_> = w.iter().map(|&v| Tangent::new(v, 0.0)).collect();
        let tx: Vec<_> = x.iter().map(|&v| Tangent::new(v, 0.0)).collect();
        assert_eq!(t.dot(&tw, &tx).v, 0.0);
    }

    #[test]
    fn logistic_is_stable_at_extremes() {
        assert_eq!(logistic(0.0), 0.5);
        assert!(logistic(-800.0) >= 0.0);
        assert!(logistic(800.0) <= 1.0);
        assert!((logistic(2.0) + logistic(-2.0) - 1.0).abs() < 1e-15);
    }
}
