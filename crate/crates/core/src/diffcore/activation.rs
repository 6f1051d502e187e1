use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::combinatorics::MAX_ORDER;

/// Highest activation derivative available. One above [`MAX_ORDER`] because
/// the reverse pass needs `σ^(n+1)` to differentiate an order-`n` stack.
pub const MAX_ACTIVATION_ORDER: usize = MAX_ORDER + 1;

/// Smooth, parameter-free activation functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Tanh,
}

impl ActivationKind {
    /// Stable tag used in checkpoints.
    pub fn tag(self) -> u8 {
        match self {
            ActivationKind::Tanh => 0,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ActivationKind::Tanh),
            _ => None,
        }
    }

    #[inline]
    pub fn eval(self, a: f64) -> f64 {
        match self {
            ActivationKind::Tanh => a.tanh(),
        }
    }

    /// Writes `σ(a), σ'(a), …, σ^(k)(a)` into `out` (`k = out.len() - 1`).
    pub fn stack_into(self, a: f64, out: &mut [f64]) {
        match self {
            ActivationKind::Tanh => {
                let t = a.tanh();
                let polys = tanh_polynomials();
                assert!(out.len() <= polys.len(), "activation order too high");
                for (k, slot) in out.iter_mut().enumerate() {
                    *slot = if k == 0 { t } else { horner(&polys[k], t) };
                }
            }
        }
    }
}

/// `[σ(a), σ'(a), …, σ^(n)(a)]`.
///
/// For tanh, `σ^(k)(a) = P_k(tanh a)` where `P_0(t) = t` and
/// `P_{k+1}(t) = P_k'(t)·(1 - t²)`. The polynomial coefficients are integers
/// computed once; each stack is then a handful of Horner evaluations.
pub fn activation_stack(kind: ActivationKind, a: f64, n: usize) -> Vec<f64> {
    assert!(n <= MAX_ACTIVATION_ORDER, "activation order {n} too high");
    let mut out = vec![0.0; n + 1];
    kind.stack_into(a, &mut out);
    out
}

#[inline]
fn horner(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

/// Ascending-power coefficients of `P_0 … P_{MAX_ACTIVATION_ORDER}`.
fn tanh_polynomials() -> &'static [Vec<f64>] {
    static POLYS: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    POLYS.get_or_init(|| {
        let mut polys: Vec<Vec<i64>> = vec![vec![0, 1]];
        for k in 0..MAX_ACTIVATION_ORDER {
            let p = &polys[k];
            // derivative
            let dp: Vec<i64> = p.iter().enumerate().skip(1).map(|(i, &c)| i as i64 * c).collect();
            // times (1 - t²)
            let mut next = vec![0i64; dp.len() + 2];
            for (i, &c) in dp.iter().enumerate() {
                next[i] += c;
                next[i + 2] -= c;
            }
            while next.len() > 1 && *next.last().unwrap() == 0 {
                next.pop();
            }
            polys.push(next);
        }
        // Largest coefficient (order 17) is ~7.8e15 < 2^53, so the cast is exact.
        polys
            .into_iter()
            .map(|p| p.into_iter().map(|c| c as f64).collect())
            .collect()
    })
}
