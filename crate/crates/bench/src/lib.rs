//! Shared fixtures for the criterion benchmarks under `benches/`.

use ntp_core::{ActivationKind, DenseNet};

/// Tanh network with `depth` hidden layers of `width`, scalar in and out.
pub fn network(depth: usize, width: usize, seed: u64) -> DenseNet {
    let mut widths = vec![1];
    widths.extend(std::iter::repeat_n(width, depth));
    widths.push(1);
    DenseNet::init(&widths, ActivationKind::Tanh, seed).expect("positive widths")
}

/// `batch` evenly spaced inputs on `[-1, 1]`.
pub fn inputs(batch: usize) -> Vec<f64> {
    match batch {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..batch).map(|i| -1.0 + 2.0 * i as f64 / (batch - 1) as f64).collect(),
    }
}
