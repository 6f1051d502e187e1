//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! Each iteration costs one gradient evaluation (forward and backward) at
//! the accepted point. Trial points inside the line search only need the
//! value and the directional derivative along the search direction, which
//! [`Objective::value_and_directional`] supplies from a forward sweep.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{Objective, OptimError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LbfgsConfig {
    pub window: usize,
    pub c1: f64,
    pub c2: f64,
    /// Cap on objective evaluations per line search.
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            window: 20,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 25,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsState {
    pub config: LbfgsConfig,
    s: VecDeque<Vec<f64>>,
    y: VecDeque<Vec<f64>>,
    rho: VecDeque<f64>,
    value: f64,
    grad: Vec<f64>,
    primed: bool,
    skipped_pairs: usize,
}

/// Outcome of one [`lbfgs_step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// Loss at the accepted point.
    pub value: f64,
    pub step: f64,
    /// Line-search trial evaluations (forward only).
    pub evaluations: usize,
    /// All forward passes, the gradient evaluation included.
    pub forwards: usize,
    pub backwards: usize,
    /// The accepted point came from the best-decrease fallback rather than
    /// satisfying both Wolfe conditions.
    pub fallback: bool,
    /// Gradient was exactly zero; nothing was evaluated or moved.
    pub converged: bool,
}

impl LbfgsState {
    pub fn new(len: usize, config: LbfgsConfig) -> Self {
        Self {
            config,
            s: VecDeque::new(),
            y: VecDeque::new(),
            rho: VecDeque::new(),
            value: f64::NAN,
            grad: vec![0.0; len],
            primed: false,
            skipped_pairs: 0,
        }
    }

    /// Evaluates value and gradient at `x` to start the iteration. Called
    /// automatically by the first [`lbfgs_step`] if needed.
    pub fn prime<O: Objective + ?Sized>(&mut self, obj: &mut O, x: &[f64]) -> Result<f64, OptimError> {
        self.value = obj.value_and_gradient(x, &mut self.grad)?;
        if !self.value.is_finite() {
            return Err(OptimError::Objective("non-finite loss at the starting point".into()));
        }
        if let Some(index) = self.grad.iter().position(|g| !g.is_finite()) {
            return Err(OptimError::NonFiniteGradient { index });
        }
        self.primed = true;
        Ok(self.value)
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn gradient(&self) -> &[f64] {
        &self.grad
    }

    pub fn history_len(&self) -> usize {
        self.s.len()
    }

    /// Curvature pairs rejected because `sᵀy ≤ 0`.
    pub fn skipped_pairs(&self) -> usize {
        self.skipped_pairs
    }

    pub fn reset_history(&mut self) {
        self.s.clear();
        self.y.clear();
        self.rho.clear();
    }

    /// `−H·g` by the two-loop recursion.
    fn direction(&self) -> Vec<f64> {
        let mut q = self.grad.clone();
        let k = self.s.len();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            alpha[i] = self.rho[i] * dot(&self.s[i], &q);
            axpy(-alpha[i], &self.y[i], &mut q);
        }
        if k > 0 {
            let gamma = dot(&self.s[k - 1], &self.y[k - 1]) / dot(&self.y[k - 1], &self.y[k - 1]);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for i in 0..k {
            let beta = self.rho[i] * dot(&self.y[i], &q);
            axpy(alpha[i] - beta, &self.s[i], &mut q);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }

    fn admit(&mut self, s: Vec<f64>, y: Vec<f64>) {
        if self.config.window == 0 {
            return;
        }
        let sy = dot(&s, &y);
        if !(sy > 0.0 && sy.is_finite()) {
            self.skipped_pairs += 1;
            return;
        }
        if self.s.len() == self.config.window {
            self.s.pop_front();
            self.y.pop_front();
            self.rho.pop_front();
        }
        self.s.push_back(s);
        self.y.push_back(y);
        self.rho.push_back(1.0 / sy);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// One L-BFGS iteration, updating `x` in place.
pub fn lbfgs_step<O: Objective + ?Sized>(
    state: &mut LbfgsState,
    obj: &mut O,
    x: &mut [f64],
) -> Result<StepReport, OptimError> {
    let mut report = StepReport {
        value: state.value,
        step: 0.0,
        evaluations: 0,
        forwards: 0,
        backwards: 0,
        fallback: false,
        converged: false,
    };
    if !state.primed {
        state.prime(obj, x)?;
        report.forwards += 1;
        report.backwards += 1;
        report.value = state.value;
    }
    if state.grad.iter().all(|&g| g == 0.0) {
        report.converged = true;
        return Ok(report);
    }

    let mut d = state.direction();
    let mut slope = dot(&d, &state.grad);
    if !(slope < 0.0 && slope.is_finite()) {
        state.reset_history();
        d = state.direction();
        slope = dot(&d, &state.grad);
    }
    let alpha0 = if state.s.is_empty() {
        let gmax = state.grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        (1.0 / gmax).min(1.0)
    } else {
        1.0
    };

    let search = strong_wolfe(obj, x, &d, state.value, slope, alpha0, &state.config)?;
    report.evaluations = search.evaluations;
    report.forwards += search.evaluations;
    let Some((alpha, fallback)) = search.accepted else {
        return Err(OptimError::StepRejected {
            evaluations: search.evaluations,
        });
    };

    let s: Vec<f64> = d.iter().map(|v| alpha * v).collect();
    let x_old = x.to_vec();
    for (xi, si) in x.iter_mut().zip(&s) {
        *xi += si;
    }
    let mut g_new = vec![0.0; x.len()];
    let f_new = obj.value_and_gradient(x, &mut g_new)?;
    report.forwards += 1;
    report.backwards += 1;
    if !f_new.is_finite() || g_new.iter().any(|g| !g.is_finite()) {
        x.copy_from_slice(&x_old);
        return Err(OptimError::StepRejected {
            evaluations: search.evaluations,
        });
    }
    let y: Vec<f64> = g_new.iter().zip(&state.grad).map(|(a, b)| a - b).collect();
    state.admit(s, y);
    state.value = f_new;
    state.grad = g_new;

    report.value = f_new;
    report.step = alpha;
    report.fallback = fallback;
    Ok(report)
}

#[derive(Debug, Clone, Copy)]
struct Trial {
    alpha: f64,
    f: f64,
    g: f64,
}

struct Search {
    accepted: Option<(f64, bool)>,
    evaluations: usize,
}

struct Phi<'a, O: ?Sized> {
    obj: &'a mut O,
    x: &'a [f64],
    d: &'a [f64],
    point: Vec<f64>,
    evaluations: usize,
    best: Option<(f64, f64)>,
}

impl<O: Objective + ?Sized> Phi<'_, O> {
    fn eval(&mut self, alpha: f64) -> Result<Trial, OptimError> {
        for ((p, x), d) in self.point.iter_mut().zip(self.x).zip(self.d) {
            *p = x + alpha * d;
        }
        let (f, g) = self.obj.value_and_directional(&self.point, self.d)?;
        self.evaluations += 1;
        if f.is_finite() && self.best.is_none_or(|(_, bf)| f < bf) {
            self.best = Some((alpha, f));
        }
        Ok(Trial { alpha, f, g })
    }
}

/// Minimiser of the cubic through two trials, or `None` if it does not exist.
fn cubic_min(a: Trial, b: Trial) -> Option<f64> {
    let d1 = a.g + b.g - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.g * b.g;
    if !(disc >= 0.0) {
        return None;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let t = b.alpha - (b.alpha - a.alpha) * (b.g + d2 - d1) / (b.g - a.g + 2.0 * d2);
    t.is_finite().then_some(t)
}

fn strong_wolfe<O: Objective + ?Sized>(
    obj: &mut O,
    x: &[f64],
    d: &[f64],
    f0: f64,
    g0: f64,
    alpha0: f64,
    config: &LbfgsConfig,
) -> Result<Search, OptimError> {
    let mut phi = Phi {
        obj,
        x,
        d,
        point: vec![0.0; x.len()],
        evaluations: 0,
        best: None,
    };
    let max = config.max_line_search.max(1);
    let armijo = |t: &Trial| t.f.is_finite() && t.f <= f0 + config.c1 * t.alpha * g0;
    let curvature = |t: &Trial| t.g.abs() <= -config.c2 * g0;

    let mut prev = Trial { alpha: 0.0, f: f0, g: g0 };
    let mut alpha = alpha0;
    let mut bracket = None;
    for i in 0..max {
        let t = phi.eval(alpha)?;
        if !armijo(&t) || (i > 0 && t.f >= prev.f) {
            bracket = Some((prev, t));
            break;
        }
        if curvature(&t) {
            return Ok(Search {
                accepted: Some((t.alpha, false)),
                evaluations: phi.evaluations,
            });
        }
        if t.g >= 0.0 {
            bracket = Some((t, prev));
            break;
        }
        prev = t;
        alpha *= 2.0;
    }

    if let Some((mut lo, mut hi)) = bracket {
        while phi.evaluations < max {
            let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
            let width = b - a;
            if width <= 1e-16 * b.max(1e-300) {
                break;
            }
            let guess = if hi.f.is_finite() && hi.g.is_finite() {
                cubic_min(lo, hi)
            } else {
                None
            };
            let alpha = match guess {
                Some(t) if t > a + 0.1 * width && t < b - 0.1 * width => t,
                _ => 0.5 * (a + b),
            };
            let t = phi.eval(alpha)?;
            if !armijo(&t) || t.f >= lo.f {
                hi = t;
            } else {
                if curvature(&t) {
                    return Ok(Search {
                        accepted: Some((t.alpha, false)),
                        evaluations: phi.evaluations,
                    });
                }
                if t.g * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = t;
            }
        }
    }

    let accepted = phi
        .best
        .filter(|&(a, f)| a > 0.0 && f < f0)
        .map(|(a, _)| (a, true));
    Ok(Search {
        accepted,
        evaluations: phi.evaluations,
    })
}
