//! Dense feed-forward networks with scalar input and output.
//!
//! Layers are affine maps `a = W·x + b`; every layer but the last is
//! followed by the activation. Parameters live in one flat vector, layer by
//! layer, each layer's weights (row-major, `fan_out × fan_in`) followed by
//! its biases. The flat layout is what lets the same forward code run over
//! plain floats, tape variables or tangents.

mod checkpoint;
mod ntp;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::diffcore::{dot_f64, ActivationKind, Analytic};

pub use checkpoint::CheckpointError;
pub use ntp::{
    forward_ntp, forward_ntp_with, write_stack_csv, DerivativeStack, NtpStats,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("invalid widths {widths:?}: {reason}")]
    InvalidWidths { widths: Vec<usize>, reason: &'static str },
    #[error("derivative order {requested} exceeds the table maximum {max}")]
    OrderTooHigh { requested: usize, max: usize },
    #[error("non-finite value at layer {layer}, derivative order {order}")]
    Poisoned { layer: usize, order: usize },
    #[error("expected {expected} parameters, got {found}")]
    ParamCount { expected: usize, found: usize },
}

/// Shape of one affine layer and where its parameters sit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

/// Widths, activation and parameter layout, without parameter values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    widths: Vec<usize>,
    activation: ActivationKind,
    layers: Vec<LayerShape>,
    param_count: usize,
}

impl Architecture {
    pub fn new(widths: &[usize], activation: ActivationKind) -> Result<Self, NetworkError> {
        let invalid = |reason| NetworkError::InvalidWidths {
            widths: widths.to_vec(),
            reason,
        };
        if widths.len() < 2 {
            return Err(invalid("need at least an input and an output width"));
        }
        if widths[0] != 1 || *widths.last().unwrap() != 1 {
            return Err(invalid("input and output widths must be 1"));
        }
        if widths.contains(&0) {
            return Err(invalid("hidden widths must be at least 1"));
        }
        let mut layers = Vec::with_capacity(widths.len() - 1);
        let mut offset = 0;
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            layers.push(LayerShape {
                fan_in,
                fan_out,
                weight_offset: offset,
                bias_offset: offset + fan_in * fan_out,
            });
            offset += fan_in * fan_out + fan_out;
        }
        Ok(Self {
            widths: widths.to_vec(),
            activation,
            layers,
            param_count: offset,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> ActivationKind {
        self.activation
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    /// `M = Σ_ℓ (fan_in·fan_out + fan_out)`.
    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn max_width(&self) -> usize {
        self.widths.iter().copied().max().unwrap_or(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    arch: Architecture,
    /// Seed the parameters were initialised from, if any.
    seed: Option<u64>,
    params: Vec<f64>,
}

impl DenseNet {
    /// Glorot-uniform weights and zero biases, fully determined by `seed`.
    pub fn init(widths: &[usize], activation: ActivationKind, seed: u64) -> Result<Self, NetworkError> {
        let arch = Architecture::new(widths, activation)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; arch.param_count()];
        for layer in arch.layers() {
            let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            let n = layer.fan_in * layer.fan_out;
            for w in &mut params[layer.weight_offset..layer.weight_offset + n] {
                *w = dist.sample(&mut rng);
            }
        }
        Ok(Self {
            arch,
            seed: Some(seed),
            params,
        })
    }

    pub fn from_params(
        widths: &[usize],
        activation: ActivationKind,
        params: Vec<f64>,
    ) -> Result<Self, NetworkError> {
        let arch = Architecture::new(widths, activation)?;
        if params.len() != arch.param_count() {
            return Err(NetworkError::ParamCount {
                expected: arch.param_count(),
                found: params.len(),
            });
        }
        Ok(Self {
            arch,
            seed: None,
            params,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn widths(&self) -> &[usize] {
        self.arch.widths()
    }

    pub fn activation(&self) -> ActivationKind {
        self.arch.activation()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Replaces every parameter; lengths must match.
    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.params.len());
        self.params.copy_from_slice(params);
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        let l = self.arch.layers[layer];
        &self.params[l.weight_offset..l.weight_offset + l.fan_in * l.fan_out]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        let l = self.arch.layers[layer];
        &self.params[l.bias_offset..l.bias_offset + l.fan_out]
    }

    /// Plain evaluation of a batch of inputs.
    pub fn forward(&self, xs: &[f64]) -> Result<Vec<f64>, NetworkError> {
        let layers = self.arch.layers();
        let mut h = Vec::with_capacity(self.arch.max_width());
        let mut next = Vec::with_capacity(self.arch.max_width());
        let mut out = Vec::with_capacity(xs.len());
        for &x in xs {
            h.clear();
            h.push(x);
            for (li, layer) in layers.iter().enumerate() {
                next.clear();
                for r in 0..layer.fan_out {
                    let row = &self.params[layer.weight_offset + r * layer.fan_in..][..layer.fan_in];
                    let mut a = dot_f64(row, &h) + self.params[layer.bias_offset + r];
                    if li + 1 < layers.len() {
                        a = self.arch.activation.eval(a);
                    }
                    if !a.is_finite() {
                        return Err(NetworkError::Poisoned { layer: li, order: 0 });
                    }
                    next.push(a);
                }
                std::mem::swap(&mut h, &mut next);
            }
            out.push(h[0]);
        }
        Ok(out)
    }

    /// The same network evaluated over any [`Analytic`] scalar. With a
    /// nested dual input this is the exponential-cost derivative reference.
    pub fn eval_analytic<T: Analytic>(&self, x: &T) -> T {
        let layers = self.arch.layers();
        let mut h = vec![x.clone()];
        for (li, layer) in layers.iter().enumerate() {
            let mut next = Vec::with_capacity(layer.fan_out);
            for r in 0..layer.fan_out {
                let row = &self.params[layer.weight_offset + r * layer.fan_in..][..layer.fan_in];
                let mut acc = x.lift(0.0);
                for (w, hv) in row.iter().zip(&h) {
                    acc = acc.add(&hv.scale(*w));
                }
                let mut a = acc.add_scalar(self.params[layer.bias_offset + r]);
                if li + 1 < layers.len() {
                    a = match self.arch.activation {
                        ActivationKind::Tanh => a.tanh(),
                    };
                }
                next.push(a);
            }
            h = next;
        }
        h.pop().unwrap()
    }

    pub fn serialize(&self) -> Vec<u8> {
        checkpoint::serialize(self)
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self, CheckpointError> {
        checkpoint::deserialize(bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts() {
        let net = DenseNet::init(&[1, 24, 24, 24, 1], ActivationKind::Tanh, 0).unwrap();
        assert_eq!(net.param_count(), 1273);
        let single = DenseNet::init(&[1, 1], ActivationKind::Tanh, 0).unwrap();
        assert_eq!(single.param_count(), 2);
    }

    #[test]
    fn init_is_seeded() {
        let a = DenseNet::init(&[1, 8, 8, 1], ActivationKind::Tanh, 42).unwrap();
        let b = DenseNet::init(&[1, 8, 8, 1], ActivationKind::Tanh, 42).unwrap();
        let c = DenseNet::init(&[1, 8, 8, 1], ActivationKind::Tanh, 43).unwrap();
        assert_eq!(
            a.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_ne!(a.params(), c.params());
        assert!(a.biases(0).iter().all(|&b| b == 0.0));
        let limit = (6.0f64 / 16.0).sqrt();
        assert!(a.weights(1).iter().all(|w| w.abs() <= limit));
    }

    #[test]
    fn rejects_bad_widths() {
        for w in [&[1][..], &[2, 4, 1], &[1, 4, 2], &[1, 0, 1]] {
            assert!(matches!(
                DenseNet::init(w, ActivationKind::Tanh, 0),
                Err(NetworkError::InvalidWidths { .. })
            ));
        }
    }

    #[test]
    fn affine_forward() {
        let net = DenseNet::from_params(&[1, 1], ActivationKind::Tanh, vec![2.0, 1.0]).unwrap();
        assert_eq!(net.forward(&[3.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn zero_weights_output_final_bias() {
        let mut net = DenseNet::init(&[1, 5, 5, 1], ActivationKind::Tanh, 1).unwrap();
        let n = net.param_count();
        let mut p = vec![0.0; n];
        p[n - 1] = -0.75;
        net.set_params(&p);
        assert_eq!(net.forward(&[-3.0, 0.0, 11.0]).unwrap(), vec![-0.75; 3]);
    }

    #[test]
    fn analytic_matches_forward() {
        let net = DenseNet::init(&[1, 6, 4, 1], ActivationKind::Tanh, 9).unwrap();
        for x in [-1.3, 0.0, 0.4] {
            let a = net.eval_analytic(&x);
            let f = net.forward(&[x]).unwrap()[0];
            assert!((a - f).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_input_is_poisoned() {
        let net = DenseNet::init(&[1, 3, 1], ActivationKind::Tanh, 0).unwrap();
        assert!(matches!(
            net.forward(&[f64::NAN]),
            Err(NetworkError::Poisoned { layer: 0, order: 0 })
        ));
    }
}
