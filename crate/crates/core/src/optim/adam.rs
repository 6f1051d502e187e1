use serde::{Deserialize, Serialize};

use super::OptimError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }
}

/// Bias-corrected Adam update of `params` in place.
///
/// A non-finite gradient aborts before anything is modified.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64]) -> Result<(), OptimError> {
    assert_eq!(params.len(), state.m.len());
    assert_eq!(grads.len(), state.m.len());
    if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
        return Err(OptimError::NonFiniteGradient { index });
    }
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = AdamState::new(3, AdamConfig::default());
        let mut p = [1.0, -2.0, 0.5];
        adam_step(&mut s, &mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, [1.0, -2.0, 0.5]);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn quadratic_converges() {
        let config = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut s = AdamState::new(1, config);
        let mut theta = [1.0];
        for _ in 0..500 {
            let g = [2.0 * theta[0]];
            adam_step(&mut s, &mut theta, &g).unwrap();
        }
        assert!(theta[0].abs() < 1e-3, "{}", theta[0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = AdamState::new(2, AdamConfig::default());
        let mut p = [0.0, 0.0];
        adam_step(&mut s, &mut p, &[3.0, -0.01]).unwrap();
        assert!((p[0] + 1e-3).abs() < 1e-9);
        assert!((p[1] - 1e-3).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut s = AdamState::new(2, AdamConfig::default());
        let mut p = [1.0, 1.0];
        let err = adam_step(&mut s, &mut p, &[0.1, f64::NAN]).unwrap_err();
        assert_eq!(err, OptimError::NonFiniteGradient { index: 1 });
        assert_eq!(p, [1.0, 1.0]);
        assert_eq!(s.step_count(), 0);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut s = AdamState::new(2, AdamConfig::default());
            let mut p = [0.3, -0.7];
            for i in 0..10 {
                let g = [p[0] * 1.5 + i as f64, p[1].sin()];
                adam_step(&mut s, &mut p, &g).unwrap();
            }
            p.map(f64::to_bits)
        };
        assert_eq!(run(), run());
    }
}
