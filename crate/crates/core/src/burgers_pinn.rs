//! Self-similar Burgers profiles as a PINN inverse problem.
//!
//! Under the blowup rescaling, inviscid Burgers reduces to the ODE
//!
//! ```text
//! R(X) = −λU + ((1 + λ)X + U)·U′ = 0
//! ```
//!
//! whose smooth odd solutions exist for `λ = 1/(2k)` and are given implicitly
//! by `X = −U − C·U^(2k+1)`. The network learns `U` and the scalar `λ`
//! together. Derivatives of `R` in `X` come from the n-TP derivative stack
//! through the Leibniz rule, so the forward pass is the only place input
//! derivatives are produced.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::combinatorics::{build_faa_table, FaaTable};
use crate::diffcore::{logistic, Arith, Plain};
use crate::network::{forward_ntp_with, Architecture, DenseNet, NetworkError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PinnError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("stack of order {order} is too short for residual derivative {m} (needs {})", m + 1)]
    StackTooShort { order: usize, m: usize },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("non-finite {component} loss")]
    Poisoned { component: &'static str },
}

/// `(1/(2k+1), min(1, 1/(2k−1)))`.
pub fn lambda_range(k: u32) -> (f64, f64) {
    let k = k as f64;
    (1.0 / (2.0 * k + 1.0), (1.0 / (2.0 * k - 1.0)).min(1.0))
}

/// Squashes an unconstrained value into the open interval `range`.
pub fn constrain_lambda(raw: f64, range: (f64, f64)) -> f64 {
    let (lo, hi) = range;
    (lo + (hi - lo) * logistic(raw)).clamp(lo.next_up(), hi.next_down())
}

fn lambda_with<C: Arith>(ctx: &mut C, raw: C::V, range: (f64, f64)) -> C::V {
    let s = logistic(ctx.value(raw));
    let v = constrain_lambda(ctx.value(raw), range);
    ctx.node(v, &[(raw, (range.1 - range.0) * s * (1.0 - s))])
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfSimilarProblem {
    k: u32,
    pub lambda_raw: f64,
    lambda_range: (f64, f64),
    collocation: Vec<f64>,
    origin: Vec<f64>,
    x_max: f64,
}

impl SelfSimilarProblem {
    /// Uniform collocation on `[−x_max, x_max]` and uniform origin points on
    /// `[−h, h]`; `lambda_raw` starts at 0, the middle of the range.
    pub fn new(
        k: u32,
        x_max: f64,
        n_colloc: usize,
        n_origin: usize,
        origin_halfwidth: f64,
    ) -> Result<Self, PinnError> {
        if k == 0 {
            return Err(PinnError::InvalidArgument("profile index must be ≥ 1".into()));
        }
        if !(x_max > 0.0 && x_max.is_finite()) {
            return Err(PinnError::InvalidArgument(format!("x_max must be positive, got {x_max}")));
        }
        if n_colloc < 2 {
            return Err(PinnError::InvalidArgument("need at least 2 collocation points".into()));
        }
        if !(origin_halfwidth > 0.0 && origin_halfwidth <= x_max) {
            return Err(PinnError::InvalidArgument(format!(
                "origin half-width {origin_halfwidth} outside (0, {x_max}]"
            )));
        }
        Ok(Self {
            k,
            lambda_raw: 0.0,
            lambda_range: lambda_range(k),
            collocation: linspace(-x_max, x_max, n_colloc),
            origin: linspace(-origin_halfwidth, origin_halfwidth, n_origin),
            x_max,
        })
    }

    /// 256 collocation points on `[−2, 2]`, 33 origin points on `[−0.1, 0.1]`.
    pub fn desk(k: u32) -> Self {
        Self::new(k, 2.0, 256, 33, 0.1).expect("desk defaults are valid")
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn lambda_range(&self) -> (f64, f64) {
        self.lambda_range
    }

    pub fn collocation(&self) -> &[f64] {
        &self.collocation
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn lambda(&self) -> f64 {
        constrain_lambda(self.lambda_raw, self.lambda_range)
    }

    /// `1/(2k)`.
    pub fn target_lambda(&self) -> f64 {
        1.0 / (2.0 * self.k as f64)
    }

    pub fn lambda_error(&self) -> f64 {
        (self.lambda() - self.target_lambda()).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub sobolev_order: usize,
    /// `Q_0 … Q_m`.
    pub weights: Vec<f64>,
    /// Network derivative order `n*` probed at the origin points; the loss
    /// penalises `∂^(n*−1) R` there.
    pub origin_order: usize,
    pub origin_weight: f64,
    pub bc_weight: f64,
    /// Weight of the endpoint match `U(±X_max) = U*(±X_max)` against the
    /// `C = 1` profile.
    pub anchor_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::for_profile(1)
    }
}

impl LossConfig {
    pub fn for_profile(k: u32) -> Self {
        Self {
            sobolev_order: 1,
            weights: vec![1.0, 1.0],
            origin_order: 2 * k as usize + 1,
            origin_weight: 1.0,
            bc_weight: 10.0,
            anchor_weight: 10.0,
        }
    }

    /// Derivative order the forward pass must produce.
    pub fn stack_order(&self) -> usize {
        (self.sobolev_order + 1).max(self.origin_order).max(1)
    }

    pub fn validate(&self, problem: &SelfSimilarProblem) -> Result<(), PinnError> {
        let bad = |msg: String| Err(PinnError::InvalidArgument(msg));
        if self.weights.len() != self.sobolev_order + 1 {
            return bad(format!(
                "expected {} Sobolev weights, got {}",
                self.sobolev_order + 1,
                self.weights.len()
            ));
        }
        let scalars = [self.origin_weight, self.bc_weight, self.anchor_weight];
        if self.weights.iter().chain(&scalars).any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("loss weights must be finite and non-negative".into());
        }
        if self.origin_order != 2 * problem.k() as usize + 1 {
            return bad(format!(
                "origin order {} does not match 2k+1 = {} for profile {}",
                self.origin_order,
                2 * problem.k() + 1,
                problem.k()
            ));
        }
        if self.stack_order() > crate::combinatorics::MAX_ORDER {
            return bad(format!("derivative order {} is too high", self.stack_order()));
        }
        Ok(())
    }
}

/// Weighted loss components; `total` is their sum in field order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<V> {
    pub total: V,
    pub residual: V,
    pub sobolev: V,
    pub origin: V,
    pub bc: V,
    pub anchor: V,
}

impl LossBreakdown<f64> {
    pub fn components(&self) -> [(&'static str, f64); 5] {
        [
            ("residual", self.residual),
            ("sobolev", self.sobolev),
            ("origin", self.origin),
            ("bc", self.bc),
            ("anchor", self.anchor),
        ]
    }
}

/// `R = −λU + ((1+λ)X + U)U′` from a point stack `u = [U, U′, …]`.
pub fn residual(u: &[f64], lambda: f64, x: f64) -> f64 {
    assert!(u.len() >= 2, "residual needs U and U′");
    residual_x_derivative_with(&mut Plain, u, lambda, x, 0)
}

/// `∂^m R/∂X^m` in closed form:
///
/// ```text
/// −λU^(m) + ((1+λ)X + U)U^(m+1) + m((1+λ) + U′)U^(m) + Σ_{i=2}^{m} C(m,i)·U^(i)·U^(m−i+1)
/// ```
pub fn residual_x_derivative(u: &[f64], lambda: f64, x: f64, m: usize) -> Result<f64, PinnError> {
    if u.len() < m + 2 {
        return Err(PinnError::StackTooShort {
            order: u.len().saturating_sub(1),
            m,
        });
    }
    Ok(residual_x_derivative_with(&mut Plain, u, lambda, x, m))
}

/// [`residual_x_derivative`] in any evaluation context. `u` must hold at
/// least `m + 2` entries.
pub fn residual_x_derivative_with<C: Arith>(
    ctx: &mut C,
    u: &[C::V],
    lambda: C::V,
    x: f64,
    m: usize,
) -> C::V {
    let one_plus = ctx.add_const(lambda, 1.0);
    let drift = ctx.scale(x, one_plus);
    let a = ctx.add(drift, u[0]);
    let transport = ctx.mul(a, u[m + 1]);
    let decay = ctx.mul(lambda, u[m]);
    let mut acc = ctx.sub(transport, decay);
    if m >= 1 {
        let s = ctx.add(one_plus, u[1]);
        let t = ctx.mul(s, u[m]);
        let t = ctx.scale(m as f64, t);
        acc = ctx.add(acc, t);
        let mut binom = m as f64;
        for i in 2..=m {
            binom = binom * (m + 1 - i) as f64 / i as f64;
            let p = ctx.mul(u[i], u[m - i + 1]);
            let p = ctx.scale(binom, p);
            acc = ctx.add(acc, p);
        }
    }
    acc
}

fn mean_square<C: Arith>(ctx: &mut C, values: &[C::V]) -> C::V {
    let squares: Vec<C::V> = values.iter().map(|&v| ctx.square(v)).collect();
    let s = ctx.sum(&squares);
    ctx.scale(1.0 / values.len().max(1) as f64, s)
}

/// Loss of the network `net` with the problem's current `λ`.
pub fn total_loss(
    net: &DenseNet,
    problem: &SelfSimilarProblem,
    config: &LossConfig,
    table: &FaaTable,
) -> Result<LossBreakdown<f64>, PinnError> {
    total_loss_with(
        &mut Plain,
        net.architecture(),
        net.params(),
        problem.lambda_raw,
        problem,
        config,
        table,
    )
}

/// The composite loss in any evaluation context, from one n-TP pass over
/// the collocation points, the origin points, `0` and `±X_max`.
pub fn total_loss_with<C: Arith>(
    ctx: &mut C,
    arch: &Architecture,
    params: &[C::V],
    lambda_raw: C::V,
    problem: &SelfSimilarProblem,
    config: &LossConfig,
    table: &FaaTable,
) -> Result<LossBreakdown<C::V>, PinnError> {
    config.validate(problem)?;
    let colloc = problem.collocation();
    let origin = problem.origin();
    let (nc, no) = (colloc.len(), origin.len());
    let x_max = problem.x_max();

    let mut xs = Vec::with_capacity(nc + no + 3);
    xs.extend_from_slice(colloc);
    xs.extend_from_slice(origin);
    xs.extend_from_slice(&[0.0, -x_max, x_max]);
    let inputs: Vec<C::V> = xs.iter().map(|&x| ctx.constant(x)).collect();
    let stack = forward_ntp_with(ctx, arch, params, &inputs, config.stack_order(), table, None)?;
    let lambda = lambda_with(ctx, lambda_raw, problem.lambda_range());

    let per_order = |ctx: &mut C, range: std::ops::Range<usize>, m: usize| -> C::V {
        let values: Vec<C::V> = range
            .map(|b| residual_x_derivative_with(ctx, &stack.at(b), lambda, xs[b], m))
            .collect();
        mean_square(ctx, &values)
    };

    let r0 = per_order(ctx, 0..nc, 0);
    let residual = ctx.scale(config.weights[0], r0);

    let mut sobolev = ctx.constant(0.0);
    for j in 1..=config.sobolev_order {
        let rj = per_order(ctx, 0..nc, j);
        let rj = ctx.scale(config.weights[j], rj);
        sobolev = ctx.add(sobolev, rj);
    }

    let ro = per_order(ctx, nc..nc + no, config.origin_order - 1);
    let origin_term = ctx.scale(config.origin_weight, ro);

    let at_zero = stack.at(nc + no);
    let u0 = ctx.square(at_zero[0]);
    let slope = ctx.add_const(at_zero[1], 1.0);
    let slope = ctx.square(slope);
    let bc = ctx.add(u0, slope);
    let bc = ctx.scale(config.bc_weight, bc);

    let mut anchor = ctx.constant(0.0);
    for b in [nc + no + 1, nc + no + 2] {
        let target = true_profile_value(problem.k(), 1.0, xs[b]);
        let d = ctx.add_const(stack.get(0)[b], -target);
        let d = ctx.square(d);
        anchor = ctx.add(anchor, d);
    }
    let anchor = ctx.scale(config.anchor_weight, anchor);

    let parts = [
        ("residual", residual),
        ("sobolev", sobolev),
        ("origin", origin_term),
        ("bc", bc),
        ("anchor", anchor),
    ];
    for (component, v) in parts {
        if !ctx.value(v).is_finite() {
            return Err(PinnError::Poisoned { component });
        }
    }
    let mut total = residual;
    for (_, v) in &parts[1..] {
        total = ctx.add(total, *v);
    }
    Ok(LossBreakdown {
        total,
        residual,
        sobolev,
        origin: origin_term,
        bc,
        anchor,
    })
}

/// Samples of the implicit solution `X = −U − C·U^(2k+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueProfile {
    pub k: u32,
    pub c: f64,
    /// `(X, U)` pairs in grid order.
    pub samples: Vec<(f64, f64)>,
}

fn profile_x(k: u32, c: f64, u: f64) -> f64 {
    -u - c * u.powi(2 * k as i32 + 1)
}

pub fn true_profile_sample(k: u32, c: f64, u_grid: &[f64]) -> TrueProfile {
    TrueProfile {
        k,
        c,
        samples: u_grid.iter().map(|&u| (profile_x(k, c, u), u)).collect(),
    }
}

/// `U(X)` on the implicit profile, by Newton's method safeguarded with
/// bisection on the bracket between `0` and `−X`.
pub fn true_profile_value(k: u32, c: f64, x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let p = 2 * k as i32 + 1;
    let (mut lo, mut hi) = if x > 0.0 { (-x, 0.0) } else { (0.0, -x) };
    let mut u = -x / (1.0 + c * x.abs().powi(p - 1)).max(1.0);
    for _ in 0..200 {
        let f = profile_x(k, c, u) - x;
        if f == 0.0 {
            return u;
        }
        // profile_x is decreasing in U
        if f > 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        let df = -1.0 - c * p as f64 * u.powi(p - 1);
        let mut next = u - f / df;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - u).abs() <= 1e-16 * u.abs().max(1e-300) {
            return next;
        }
        u = next;
    }
    u
}

/// `[U, U′, …, U^(n)]` at `X` by implicit differentiation of
/// `X = g(U(X))`: order `m` of the composition is a Faà di Bruno sum whose
/// single-block term `g′(U)·U^(m)` is solved for.
pub fn true_profile_derivatives(k: u32, c: f64, x: f64, n: usize) -> Result<Vec<f64>, PinnError> {
    let table = if n >= 1 {
        Some(build_faa_table(n).map_err(|e| PinnError::InvalidArgument(e.to_string()))?)
    } else {
        None
    };
    let u = true_profile_value(k, c, x);
    let p = 2 * k as usize + 1;
    // g^(j)(U) for j = 0..=n
    let mut g = vec![0.0; n + 2];
    let mut falling = 1.0;
    for (j, gj) in g.iter_mut().enumerate() {
        if j > 0 {
            if j > p {
                break;
            }
            falling *= (p + 1 - j) as f64;
        }
        *gj = -c * falling * u.powi((p - j) as i32);
    }
    g[0] -= u;
    g[1] -= 1.0;
    let mut out = vec![u];
    for m in 1..=n {
        let mut rest = if m == 1 { -1.0 } else { 0.0 };
        for entry in table.as_ref().unwrap().entries(m) {
            if entry.blocks == 1 {
                continue;
            }
            let mut term = entry.weight * g[entry.blocks];
            for &(j, count) in &entry.factors {
                term *= out[j].powi(count as i32);
            }
            rest += term;
        }
        out.push(-rest / g[1]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::ActivationKind;

    #[test]
    fn lambda_ranges() {
        assert_eq!(lambda_range(1), (1.0 / 3.0, 1.0));
        assert_eq!(lambda_range(2), (0.2, 1.0 / 3.0));
        assert_eq!(lambda_range(4), (1.0 / 9.0, 1.0 / 7.0));
    }

    #[test]
    fn lambda_squash() {
        let mut p = SelfSimilarProblem::desk(1);
        assert!((p.lambda() - 2.0 / 3.0).abs() < 1e-15);
        p.lambda_raw = 1e6;
        assert!(p.lambda() < 1.0);
        p.lambda_raw = -1e6;
        assert!(p.lambda() > 1.0 / 3.0);
        // logistic(−ln 3) = 1/4, so λ = 1/3 + (2/3)/4 = 1/2
        p.lambda_raw = -(3.0f64).ln();
        assert!(p.lambda_error() < 1e-15);
    }

    #[test]
    fn residual_examples() {
        assert_eq!(residual(&[0.0, 0.0], 0.7, 1.3), 0.0);
        // U = X with λ = 1
        for x in [-1.5, 0.5, 2.0] {
            assert_eq!(residual(&[x, 1.0], 1.0, x), 2.0 * x);
        }
        // hand evaluation of ∂R at the normalised origin
        let d = residual_x_derivative(&[0.0, -1.0, 0.0], 0.5, 0.0, 1).unwrap();
        assert_eq!(d, 0.0);
        assert!(matches!(
            residual_x_derivative(&[0.0, 1.0], 0.5, 0.0, 1),
            Err(PinnError::StackTooShort { order: 1, m: 1 })
        ));
    }

    #[test]
    fn true_profile_points() {
        assert_eq!(true_profile_sample(1, 1.0, &[1.0]).samples, vec![(-2.0, 1.0)]);
        assert_eq!(true_profile_sample(2, 1.0, &[1.0]).samples, vec![(-2.0, 1.0)]);
        assert_eq!(true_profile_sample(3, 2.5, &[0.0]).samples, vec![(0.0, 0.0)]);
        for k in 1..=4 {
            assert!((true_profile_value(k, 1.0, -2.0) - 1.0).abs() < 1e-15);
            assert!((true_profile_value(k, 1.0, 2.0) + 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn implicit_slope_at_origin() {
        let d = true_profile_derivatives(1, 1.0, 0.0, 3).unwrap();
        // U = −X − C·U³ ⇒ U′(0) = −1, U″(0) = 0, U‴(0) = −6C·U′³ = 6
        assert_eq!(d, vec![0.0, -1.0, 0.0, 6.0]);
    }

    #[test]
    fn zero_net_loss_is_boundary_only() {
        let arch_widths = [1, 4, 1];
        let net = DenseNet::from_params(&arch_widths, ActivationKind::Tanh, vec![0.0; 13]).unwrap();
        let problem = SelfSimilarProblem::desk(1);
        let config = LossConfig::for_profile(1);
        let table = build_faa_table(config.stack_order()).unwrap();
        let l = total_loss(&net, &problem, &config, &table).unwrap();
        assert_eq!(l.residual, 0.0);
        assert_eq!(l.sobolev, 0.0);
        assert_eq!(l.origin, 0.0);
        assert_eq!(l.bc, config.bc_weight);
        assert_eq!(l.anchor, config.anchor_weight * 2.0);
    }

    #[test]
    fn mismatched_origin_order_is_rejected() {
        let problem = SelfSimilarProblem::desk(2);
        let config = LossConfig::for_profile(1);
        assert!(config.validate(&problem).is_err());
        assert!(LossConfig::for_profile(2).validate(&problem).is_ok());
    }
}
