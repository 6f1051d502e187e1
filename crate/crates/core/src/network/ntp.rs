//! The n-TangentProp forward pass.
//!
//! Alongside the activations, every layer carries the derivative stack
//! `y_0 … y_n` of its pre-activations with respect to the network input.
//! Passing through the activation replaces order `m` by the Faà di Bruno sum
//!
//! ```text
//! y_m ← Σ_{p ∈ P(m)} C_p · σ^(|p|)(y_0) · Π_j y_j^(p_j)
//! ```
//!
//! which reads only orders below `m` (and `m` itself through the single-block
//! partition), so the update runs in place from `m = n` down to `1`. The next
//! affine map then applies to every order, with the bias added to order 0
//! only. Cost is `O(n·p(n)·M)` per input and memory is `n + 1` buffers per
//! layer.

use std::io;

use crate::combinatorics::{FaaEntry, FaaTable};
use crate::diffcore::{Arith, Plain, MAX_ACTIVATION_ORDER};

use super::{Architecture, DenseNet, NetworkError};

/// Derivatives `y_0 … y_n` of the network output for a batch of inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeStack<V> {
    orders: Vec<Vec<V>>,
}

impl<V: Copy> DerivativeStack<V> {
    pub fn order(&self) -> usize {
        self.orders.len() - 1
    }

    pub fn batch(&self) -> usize {
        self.orders[0].len()
    }

    /// Order-`k` derivative across the batch.
    pub fn get(&self, k: usize) -> &[V] {
        &self.orders[k]
    }

    /// `[y_0, …, y_n]` at batch position `b`.
    pub fn at(&self, b: usize) -> Vec<V> {
        self.orders.iter().map(|o| o[b]).collect()
    }

    pub fn into_orders(self) -> Vec<Vec<V>> {
        self.orders
    }
}

/// Instrumentation collected during one n-TP pass.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NtpStats {
    /// Buffers allocated at each affine layer (the seeding layer included).
    pub buffers_per_transition: Vec<usize>,
    /// Length of those buffers (`fan_out × batch`).
    pub buffer_lens: Vec<usize>,
    /// Largest number of derivative buffers alive at once.
    pub peak_live_buffers: usize,
    pub affine_macs: u64,
    pub faa_terms: u64,
    pub faa_mults: u64,
    pub activation_evals: u64,
}

impl NtpStats {
    pub fn primitive_ops(&self) -> u64 {
        self.affine_macs + self.faa_mults + self.activation_evals
    }

    fn allocate(&mut self, count: usize, len: usize, live: &mut usize) {
        self.buffers_per_transition.push(count);
        self.buffer_lens.push(len);
        *live += count;
        self.peak_live_buffers = self.peak_live_buffers.max(*live);
    }
}

/// Plain n-TP pass over a batch of inputs.
pub fn forward_ntp(
    net: &DenseNet,
    xs: &[f64],
    n: usize,
    table: &FaaTable,
) -> Result<DerivativeStack<f64>, NetworkError> {
    forward_ntp_with(&mut Plain, net.architecture(), net.params(), xs, n, table, None)
}

/// n-TP pass in an arbitrary evaluation context.
///
/// `params` follows the flat layout of `arch`. Passing a [`crate::Tape`]
/// records the whole pass so parameter gradients come from one reverse sweep.
pub fn forward_ntp_with<C: Arith>(
    ctx: &mut C,
    arch: &Architecture,
    params: &[C::V],
    xs: &[C::V],
    n: usize,
    table: &FaaTable,
    mut stats: Option<&mut NtpStats>,
) -> Result<DerivativeStack<C::V>, NetworkError> {
    if n > table.max_order() || n + 1 > MAX_ACTIVATION_ORDER {
        return Err(NetworkError::OrderTooHigh {
            requested: n,
            max: table.max_order(),
        });
    }
    assert_eq!(params.len(), arch.param_count(), "parameter layout mismatch");
    let batch = xs.len();
    let layers = arch.layers();
    let kind = arch.activation();
    let mut live = 0usize;

    // Seed from the first affine layer: y_0 = W·x + b, y_1 = W·1, y_k = 0.
    let first = layers[0];
    let width = first.fan_out;
    let zero = ctx.constant(0.0);
    let mut ys: Vec<Vec<C::V>> = (0..=n).map(|_| Vec::with_capacity(width * batch)).collect();
    if let Some(s) = stats.as_deref_mut() {
        s.allocate(n + 1, width * batch, &mut live);
    }
    for &x in xs {
        for r in 0..width {
            let w = params[first.weight_offset + r];
            let a = ctx.dot(&[w], &[x]);
            let a = ctx.add(a, params[first.bias_offset + r]);
            ys[0].push(a);
            if n >= 1 {
                ys[1].push(w);
            }
            for y in ys.iter_mut().skip(2) {
                y.push(zero);
            }
        }
    }
    if let Some(s) = stats.as_deref_mut() {
        s.affine_macs += (width * batch) as u64;
    }
    check_finite(ctx, &ys, 0)?;

    let mut sigma = vec![0.0; n + 2];
    let mut old = vec![0.0; n + 1];
    let mut dz_dy = vec![0.0; n + 1];
    let mut parents: Vec<(C::V, f64)> = Vec::with_capacity(n + 2);

    for (li, layer) in layers.iter().enumerate().skip(1) {
        // Activation: derivative orders high to low, then the value itself.
        let entries = ys[0].len();
        for e in 0..entries {
            let a = ys[0][e];
            let stack_len = if C::TRACKS_PARTIALS { n + 2 } else { n + 1 };
            kind.stack_into(ctx.value(a), &mut sigma[..stack_len]);
            for j in 1..=n {
                old[j] = ctx.value(ys[j][e]);
            }
            for m in (1..=n).rev() {
                let (z, dz_da) = faa_combine::<C>(
                    table.entries(m),
                    &sigma,
                    &old,
                    &mut dz_dy,
                    stats.as_deref_mut(),
                );
                parents.clear();
                parents.push((a, dz_da));
                for j in 1..=m {
                    parents.push((ys[j][e], dz_dy[j]));
                }
                ys[m][e] = ctx.node(z, &parents);
            }
            ys[0][e] = ctx.node(sigma[0], &[(a, sigma[1])]);
        }
        if let Some(s) = stats.as_deref_mut() {
            s.activation_evals += entries as u64;
        }

        // Affine map on every order; bias on order 0 only.
        let (fan_in, fan_out) = (layer.fan_in, layer.fan_out);
        if let Some(s) = stats.as_deref_mut() {
            s.allocate(n + 1, fan_out * batch, &mut live);
            s.affine_macs += ((n + 1) * fan_in * fan_out * batch) as u64;
        }
        let mut next: Vec<Vec<C::V>> = Vec::with_capacity(n + 1);
        for (k, y) in ys.iter().enumerate() {
            let mut out = Vec::with_capacity(fan_out * batch);
            for b in 0..batch {
                let input = &y[b * fan_in..(b + 1) * fan_in];
                for r in 0..fan_out {
                    let row = &params[layer.weight_offset + r * fan_in..][..fan_in];
                    let mut v = ctx.dot(row, input);
                    if k == 0 {
                        v = ctx.add(v, params[layer.bias_offset + r]);
                    }
                    out.push(v);
                }
            }
            next.push(out);
        }
        ys = next;
        if stats.is_some() {
            live -= n + 1;
        }
        check_finite(ctx, &ys, li)?;
    }

    Ok(DerivativeStack { orders: ys })
}

fn check_finite<C: Arith>(ctx: &C, ys: &[Vec<C::V>], layer: usize) -> Result<(), NetworkError> {
    for (order, y) in ys.iter().enumerate() {
        if y.iter().any(|&v| !ctx.value(v).is_finite()) {
            return Err(NetworkError::Poisoned { layer, order });
        }
    }
    Ok(())
}

/// One order of the Faà di Bruno update at a single unit.
///
/// `sigma[s] = σ^(s)(a)`, `y[j]` the incoming order-`j` derivative. Returns
/// the new value and `∂/∂a`; `∂/∂y_j` is written to `dz_dy[j]`. Partials are
/// skipped (left at zero) for contexts that ignore them.
#[inline]
fn faa_combine<C: Arith>(
    entries: &[FaaEntry],
    sigma: &[f64],
    y: &[f64],
    dz_dy: &mut [f64],
    stats: Option<&mut NtpStats>,
) -> (f64, f64) {
    let mut z = 0.0;
    let mut dz_da = 0.0;
    if C::TRACKS_PARTIALS {
        dz_dy.iter_mut().for_each(|d| *d = 0.0);
    }
    let mut mults = 0u64;
    for entry in entries {
        let mut mono = 1.0;
        for &(j, count) in &entry.factors {
            for _ in 0..count {
                mono *= y[j];
            }
        }
        mults += entry.blocks as u64 + 2;
        let outer = entry.weight * sigma[entry.blocks];
        z += outer * mono;
        if C::TRACKS_PARTIALS {
            dz_da += entry.weight * sigma[entry.blocks + 1] * mono;
            for &(j, count) in &entry.factors {
                let mut d = count as f64;
                for &(l, cl) in &entry.factors {
                    let power = if l == j { cl - 1 } else { cl };
                    for _ in 0..power {
                        d *= y[l];
                    }
                }
                dz_dy[j] += outer * d;
            }
        }
    }
    if let Some(s) = stats {
        s.faa_terms += entries.len() as u64;
        s.faa_mults += mults;
    }
    (z, dz_da)
}

/// CSV with columns `x, y0, …, yn`.
pub fn write_stack_csv<W: io::Write>(
    out: W,
    xs: &[f64],
    stack: &DerivativeStack<f64>,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["x".to_string()];
    header.extend((0..=stack.order()).map(|k| format!("y{k}")));
    w.write_record(&header)?;
    for (b, x) in xs.iter().enumerate() {
        let mut row = vec![x.to_string()];
        row.extend(stack.at(b).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combinatorics::build_faa_table;
    use crate::diffcore::{nested_derivatives, ActivationKind, Tape};

    fn table() -> FaaTable {
        build_faa_table(8).unwrap()
    }

    /// tanh(x): hidden unit with unit weight, identity-like head.
    fn tanh_net() -> DenseNet {
        DenseNet::from_params(&[1, 1, 1], ActivationKind::Tanh, vec![1.0, 0.0, 1.0, 0.0]).unwrap()
    }

    #[test]
    fn affine_net_derivatives() {
        let net = DenseNet::from_params(&[1, 1], ActivationKind::Tanh, vec![2.5, -1.0]).unwrap();
        let s = forward_ntp(&net, &[0.3, 4.0], 4, &table()).unwrap();
        assert_eq!(s.get(0), &[2.5 * 0.3 - 1.0, 2.5 * 4.0 - 1.0]);
        assert_eq!(s.get(1), &[2.5, 2.5]);
        for k in 2..=4 {
            assert_eq!(s.get(k), &[0.0, 0.0]);
        }
    }

    #[test]
    fn tanh_stack_at_zero() {
        let s = forward_ntp(&tanh_net(), &[0.0], 5, &table()).unwrap();
        assert_eq!(s.at(0), vec![0.0, 1.0, 0.0, -2.0, 0.0, 16.0]);
    }

    #[test]
    fn tanh_of_tanh() {
        let net = DenseNet::from_params(
            &[1, 1, 1, 1],
            ActivationKind::Tanh,
            vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0],
        )
        .unwrap();
        let s = forward_ntp(&net, &[0.0], 3, &table()).unwrap();
        assert_eq!(s.get(3)[0], -4.0);
    }

    #[test]
    fn order_zero_matches_forward_bitwise() {
        let net = DenseNet::init(&[1, 7, 5, 1], ActivationKind::Tanh, 3).unwrap();
        let xs = [-1.7, -0.2, 0.0, 0.9, 1.4];
        let plain = net.forward(&xs).unwrap();
        for n in [0, 1, 4] {
            let s = forward_ntp(&net, &xs, n, &table()).unwrap();
            let a: Vec<u64> = s.get(0).iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = plain.iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b, "n={n}");
        }
    }

    #[test]
    fn matches_nested_oracle() {
        let net = DenseNet::init(&[1, 8, 1], ActivationKind::Tanh, 11).unwrap();
        let xs = [-0.8, 0.35, 1.6];
        let s = forward_ntp(&net, &xs, 6, &table()).unwrap();
        for (b, &x) in xs.iter().enumerate() {
            let reference = nested_derivatives(|d| net.eval_analytic(d), x, 6).unwrap();
            for (k, (got, want)) in s.at(b).iter().zip(&reference).enumerate() {
                assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0), "k={k}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn order_above_table_is_rejected() {
        let t = build_faa_table(3).unwrap();
        assert!(matches!(
            forward_ntp(&tanh_net(), &[0.0], 4, &t),
            Err(NetworkError::OrderTooHigh { requested: 4, max: 3 })
        ));
    }

    #[test]
    fn poisoned_input_reports_layer() {
        let net = DenseNet::init(&[1, 3, 1], ActivationKind::Tanh, 0).unwrap();
        assert!(matches!(
            forward_ntp(&net, &[f64::INFINITY], 2, &table()),
            Err(NetworkError::Poisoned { layer: 0, order: 0 })
        ));
    }

    #[test]
    fn taped_pass_matches_plain() {
        let net = DenseNet::init(&[1, 4, 4, 1], ActivationKind::Tanh, 5).unwrap();
        let xs = [0.1, -0.6];
        let plain = forward_ntp(&net, &xs, 3, &table()).unwrap();
        let mut tape = Tape::new();
        let params = tape.leaves(net.params());
        let inputs: Vec<_> = xs.iter().map(|&x| tape.constant(x)).collect();
        let taped =
            forward_ntp_with(&mut tape, net.architecture(), &params, &inputs, 3, &table(), None).unwrap();
        for k in 0..=3 {
            let v: Vec<f64> = taped.get(k).iter().map(|v| v.value()).collect();
            assert_eq!(v, plain.get(k));
        }
    }

    #[test]
    fn stats_count_buffers() {
        let net = DenseNet::init(&[1, 6, 6, 1], ActivationKind::Tanh, 2).unwrap();
        let mut stats = NtpStats::default();
        let xs = [0.0; 4];
        forward_ntp_with(&mut Plain, net.architecture(), net.params(), &xs, 3, &table(), Some(&mut stats))
            .unwrap();
        assert_eq!(stats.buffers_per_transition, vec![4, 4, 4]);
        assert_eq!(stats.buffer_lens, vec![24, 24, 4]);
        assert_eq!(stats.peak_live_buffers, 8);
        // activation applied at 2 hidden layers x 6 units x 4 inputs
        assert_eq!(stats.activation_evals, 48);
    }

    #[test]
    fn csv_export() {
        let s = forward_ntp(&tanh_net(), &[0.0], 2, &table()).unwrap();
        let mut buf = Vec::new();
        write_stack_csv(&mut buf, &[0.0], &s).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x,y0,y1,y2\n0,0,1,0\n");
    }
}
