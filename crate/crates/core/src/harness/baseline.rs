//! Exponential reference: higher derivatives by nested duals, with
//! parameter gradients from a reverse sweep over a per-primitive tape.
//!
//! Every scalar primitive of the network (one weight product, one addition,
//! one bias, one activation) is a tape node holding a full depth-`n` nested
//! dual of `2^n` coefficients, the way a framework would store every
//! intermediate of `n` stacked autodiff passes.

use std::collections::TryReserveError;

use crate::diffcore::{subset_mul, subset_mul_adjoint, tanh_into};
use crate::network::Architecture;

#[derive(Debug, Clone, Copy)]
enum Op {
    Input,
    MulParam { parent: u32, param: u32 },
    Add { a: u32, b: u32 },
    AddParam { parent: u32, param: u32 },
    /// `deriv` is the slot holding `1 − tanh²` for the backward pass.
    Tanh { parent: u32, deriv: u32 },
}

/// Reusable arena for nested-dual tapes.
#[derive(Debug, Default)]
pub struct BaselineTape {
    len: usize,
    params: Vec<f64>,
    values: Vec<f64>,
    ops: Vec<Op>,
    outputs: Vec<u32>,
    scratch: Vec<f64>,
    /// First node of each sample. Samples share no nodes, so the reverse
    /// sweep needs adjoints for one sample at a time.
    starts: Vec<u32>,
    adj: Vec<f64>,
}

const NONE: u32 = u32::MAX;

/// Value slots (each `2^n` reals) the tape stores per input sample.
pub fn slots_per_sample(arch: &Architecture) -> usize {
    let layers = arch.layers();
    let mut slots = 1;
    for (i, l) in layers.iter().enumerate() {
        slots += l.fan_out * 2 * l.fan_in;
        if i + 1 < layers.len() {
            slots += 2 * l.fan_out;
        }
    }
    slots
}

/// Bytes of stored dual values for one batch at order `n`.
pub fn baseline_memory_bytes(arch: &Architecture, batch: usize, n: usize) -> u128 {
    slots_per_sample(arch) as u128 * batch as u128 * (1u128 << n) * 8
}

impl BaselineTape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Bytes of dual values stored by the last forward pass.
    pub fn memory_bytes(&self) -> usize {
        self.values.len() * 8
    }

    fn slot(&self, i: u32) -> &[f64] {
        &self.values[i as usize * self.len..(i as usize + 1) * self.len]
    }

    fn push(&mut self, op: Op) -> u32 {
        let id = self.values.len() / self.len;
        self.values.resize(self.values.len() + self.len, 0.0);
        self.ops.push(op);
        id as u32
    }

    /// Records the forward pass of every sample at order `n`. Returns the
    /// order-`n` derivative at each input.
    pub fn forward(
        &mut self,
        arch: &Architecture,
        params: &[f64],
        xs: &[f64],
        n: usize,
    ) -> Result<Vec<f64>, TryReserveError> {
        self.len = 1 << n;
        self.values.clear();
        self.ops.clear();
        self.outputs.clear();
        self.starts.clear();
        let need = slots_per_sample(arch) * xs.len() * self.len;
        self.values.try_reserve_exact(need)?;
        self.ops.try_reserve_exact(need / self.len)?;
        self.scratch.resize(self.len, 0.0);
        self.params.clear();
        self.params.extend_from_slice(params);

        let layers = arch.layers();
        let mut h: Vec<u32> = Vec::with_capacity(arch.max_width());
        let mut next: Vec<u32> = Vec::with_capacity(arch.max_width());
        for &x in xs {
            let input = self.push(Op::Input);
            self.starts.push(input);
            let base = input as usize * self.len;
            self.values[base] = x;
            for i in 0..n {
                self.values[base + (1 << i)] = 1.0;
            }
            h.clear();
            h.push(input);
            for (li, layer) in layers.iter().enumerate() {
                next.clear();
                for r in 0..layer.fan_out {
                    let mut acc = NONE;
                    for (j, &hj) in h.iter().enumerate() {
                        let param = (layer.weight_offset + r * layer.fan_in + j) as u32;
                        let w = params[param as usize];
                        let node = self.push(Op::MulParam { parent: hj, param });
                        let (src, dst) = self.pair(hj, node);
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d = w * s;
                        }
                        acc = if acc == NONE {
                            node
                        } else {
                            let sum = self.push(Op::Add { a: acc, b: node });
                            let (a, b, out) = self.triple(acc, node, sum);
                            for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
                                *o = x + y;
                            }
                            sum
                        };
                    }
                    let param = (layer.bias_offset + r) as u32;
                    let biased = self.push(Op::AddParam { parent: acc, param });
                    let (src, dst) = self.pair(acc, biased);
                    dst.copy_from_slice(src);
                    dst[0] += params[param as usize];
                    let out = if li + 1 < layers.len() {
                        self.tanh(biased)
                    } else {
                        biased
                    };
                    next.push(out);
                }
                std::mem::swap(&mut h, &mut next);
            }
            self.outputs.push(h[0]);
        }
        let top = self.len - 1;
        Ok(self.outputs.iter().map(|&o| self.slot(o)[top]).collect())
    }

    fn tanh(&mut self, parent: u32) -> u32 {
        let deriv = self.push(Op::Input);
        let node = self.push(Op::Tanh { parent, deriv });
        let len = self.len;
        let (p, d, c) = (parent as usize * len, deriv as usize * len, node as usize * len);
        debug_assert_eq!(c, d + len);
        let (head, tail) = self.values.split_at_mut(d);
        let (dslot, rest) = tail.split_at_mut(len);
        let cslot = &mut rest[..len];
        tanh_into(&head[p..p + len], cslot, &mut self.scratch);
        subset_mul(cslot, cslot, dslot);
        for v in dslot.iter_mut() {
            *v = -*v;
        }
        dslot[0] += 1.0;
        node
    }

    /// Disjoint views of an earlier node and a later one.
    fn pair(&mut self, src: u32, dst: u32) -> (&[f64], &mut [f64]) {
        let len = self.len;
        let (a, b) = self.values.split_at_mut(dst as usize * len);
        (&a[src as usize * len..][..len], &mut b[..len])
    }

    fn triple(&mut self, x: u32, y: u32, out: u32) -> (&[f64], &[f64], &mut [f64]) {
        let len = self.len;
        let (a, b) = self.values.split_at_mut(out as usize * len);
        (&a[x as usize * len..][..len], &a[y as usize * len..][..len], &mut b[..len])
    }

    /// Gradient of `mean_b seeds_b · y_n(x_b)` with respect to the
    /// parameters; passing `2·y_n/B` as seeds differentiates `mean y_n²`.
    pub fn backward(&mut self, seeds: &[f64], grads: &mut [f64]) {
        grads.iter_mut().for_each(|g| *g = 0.0);
        let len = self.len;
        for s in (0..self.starts.len()).rev() {
            let base = self.starts[s] as usize;
            let end = self.starts.get(s + 1).map_or(self.ops.len(), |&e| e as usize);
            self.adj.clear();
            self.adj.resize((end - base) * len, 0.0);
            let out = self.outputs[s] as usize - base;
            self.adj[out * len + len - 1] = seeds[s];
            for node in (base..end).rev() {
                let local = node - base;
                let (lower, upper) = self.adj.split_at_mut(local * len);
                let adj = &upper[..len];
                let parent_adj = |p: u32| (p as usize - base) * len;
                match self.ops[node] {
                    Op::Input => {}
                    Op::MulParam { parent, param } => {
                        let src = &self.values[parent as usize * len..][..len];
                        grads[param as usize] += adj.iter().zip(src).map(|(a, x)| a * x).sum::<f64>();
                        let w = self.params[param as usize];
                        let at = parent_adj(parent);
                        for (p, a) in lower[at..at + len].iter_mut().zip(adj) {
                            *p += w * a;
                        }
                    }
                    Op::Add { a, b } => {
                        for parent in [a, b] {
                            let at = parent_adj(parent);
                            for (p, g) in lower[at..at + len].iter_mut().zip(adj) {
                                *p += g;
                            }
                        }
                    }
                    Op::AddParam { parent, param } => {
                        grads[param as usize] += adj[0];
                        let at = parent_adj(parent);
                        for (p, g) in lower[at..at + len].iter_mut().zip(adj) {
                            *p += g;
                        }
                    }
                    Op::Tanh { parent, deriv } => {
                        let at = parent_adj(parent);
                        let d = &self.values[deriv as usize * len..][..len];
                        subset_mul_adjoint(adj, d, &mut lower[at..at + len]);
                    }
                }
            }
        }
    }
}
