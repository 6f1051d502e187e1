//! Reverse-mode tape.
//!
//! Each node stores only its incoming edges as `(parent, ∂node/∂parent)`
//! pairs in flat arrays. Nodes are appended in evaluation order, so a single
//! reverse sweep over the arrays visits them in reverse topological order.
//! Constants never become nodes.

use thiserror::Error;

use super::arith::Arith;

const CONST: u32 = u32::MAX;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TapeError {
    #[error("non-finite value produced at tape node {node}")]
    Poisoned { node: usize },
}

/// A value recorded on (or constant with respect to) a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Var {
    idx: u32,
    val: f64,
}

pub type TapeVar = Var;

impl Var {
    pub fn value(self) -> f64 {
        self.val
    }

    /// Tape index, or `None` for constants.
    pub fn index(self) -> Option<usize> {
        (self.idx != CONST).then_some(self.idx as usize)
    }

    pub fn is_constant(self) -> bool {
        self.idx == CONST
    }
}

#[derive(Debug, Clone)]
pub struct Tape {
    // Edge range of node i is starts[i]..starts[i + 1].
    starts: Vec<u32>,
    parents: Vec<u32>,
    partials: Vec<f64>,
    leaves: Vec<u32>,
    poisoned: Option<usize>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// A finished recording: the output value, its variable and the tape.
#[derive(Debug)]
pub struct Recording {
    pub value: f64,
    pub output: Var,
    pub tape: Tape,
}

/// Gradient of a recorded scalar with respect to every leaf, in leaf
/// creation order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    leaves: Vec<u32>,
    grads: Vec<f64>,
}

impl Gradients {
    pub fn as_slice(&self) -> &[f64] {
        &self.grads
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.grads
    }

    /// Gradient for `leaf`; zero for constants and non-leaf variables.
    pub fn wrt(&self, leaf: Var) -> f64 {
        leaf.index()
            .and_then(|i| self.leaves.binary_search(&(i as u32)).ok())
            .map_or(0.0, |pos| self.grads[pos])
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            starts: vec![0],
            parents: Vec::new(),
            partials: Vec::new(),
            leaves: Vec::new(),
            poisoned: None,
        }
    }

    /// Runs `f` on a fresh tape and checks the recording is finite.
    pub fn record<F>(f: F) -> Result<Recording, TapeError>
    where
        F: FnOnce(&mut Tape) -> Var,
    {
        let mut tape = Tape::new();
        let output = f(&mut tape);
        tape.check()?;
        Ok(Recording {
            value: output.val,
            output,
            tape,
        })
    }

    /// Drops every node but keeps the allocations for reuse.
    pub fn clear(&mut self) {
        self.starts.clear();
        self.starts.push(0);
        self.parents.clear();
        self.partials.clear();
        self.leaves.clear();
        self.poisoned = None;
    }

    /// A new independent variable.
    pub fn leaf(&mut self, value: f64) -> Var {
        let v = self.push(value);
        self.leaves.push(v.idx);
        v
    }

    pub fn leaves(&mut self, values: &[f64]) -> Vec<Var> {
        values.iter().map(|&v| self.leaf(v)).collect()
    }

    /// Total nodes, leaves included.
    pub fn len(&self) -> usize {
        self.starts.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Nodes produced by primitive operations (leaves excluded).
    pub fn op_count(&self) -> usize {
        self.len() - self.leaves.len()
    }

    pub fn edge_count(&self) -> usize {
        self.parents.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    /// Bytes currently held by node and edge storage.
    pub fn memory_bytes(&self) -> usize {
        self.starts.len() * 4 + self.parents.len() * 4 + self.partials.len() * 8 + self.leaves.len() * 4
    }

    /// First node whose value was not finite.
    pub fn poisoned(&self) -> Option<usize> {
        self.poisoned
    }

    pub fn check(&self) -> Result<(), TapeError> {
        match self.poisoned {
            Some(node) => Err(TapeError::Poisoned { node }),
            None => Ok(()),
        }
    }

    fn push(&mut self, value: f64) -> Var {
        let idx = self.len() as u32;
        assert!(idx != CONST, "tape exhausted 32-bit node indices");
        if !value.is_finite() && self.poisoned.is_none() {
            self.poisoned = Some(idx as usize);
        }
        self.starts.push(self.parents.len() as u32);
        Var { idx, val: value }
    }

    #[inline]
    fn edge(&mut self, parent: Var, partial: f64) {
        if parent.idx != CONST {
            self.parents.push(parent.idx);
            self.partials.push(partial);
        }
    }

    /// Gradient of `output` (scaled by `seed`) with respect to every leaf.
    pub fn backward(&self, output: Var, seed: f64) -> Gradients {
        let mut adj = vec![0.0; self.len()];
        self.backward_into(output, seed, &mut adj);
        let grads = self.leaves.iter().map(|&l| adj[l as usize]).collect();
        Gradients {
            leaves: self.leaves.clone(),
            grads,
        }
    }

    /// Reverse sweep into a caller-owned adjoint buffer (resized as needed).
    pub fn backward_into(&self, output: Var, seed: f64, adj: &mut Vec<f64>) {
        adj.clear();
        adj.resize(self.len(), 0.0);
        let Some(out) = output.index() else {
            return;
        };
        adj[out] = seed;
        for node in (0..=out).rev() {
            let g = adj[node];
            if g == 0.0 {
                continue;
            }
            let (lo, hi) = (self.starts[node] as usize, self.starts[node + 1] as usize);
            for e in lo..hi {
                adj[self.parents[e] as usize] += g * self.partials[e];
            }
        }
    }

    /// Leaf gradients out of an adjoint buffer filled by [`Tape::backward_into`].
    pub fn leaf_adjoints(&self, adj: &[f64]) -> Vec<f64> {
        self.leaves.iter().map(|&l| adj[l as usize]).collect()
    }
}

impl Arith for Tape {
    type V = Var;
    const TRACKS_PARTIALS: bool = true;

    #[inline]
    fn constant(&mut self, c: f64) -> Var {
        Var { idx: CONST, val: c }
    }

    #[inline]
    fn value(&self, v: Var) -> f64 {
        v.val
    }

    fn node(&mut self, value: f64, parents: &[(Var, f64)]) -> Var {
        if parents.iter().all(|(p, _)| p.is_constant()) {
            return Var { idx: CONST, val: value };
        }
        let v = self.push(value);
        for &(p, d) in parents {
            self.edge(p, d);
        }
        *self.starts.last_mut().unwrap() = self.parents.len() as u32;
        v
    }

    fn dot(&mut self, w: &[Var], x: &[Var]) -> Var {
        debug_assert_eq!(w.len(), x.len());
        let mut acc = 0.0;
        for (a, b) in w.iter().zip(x) {
            acc += a.val * b.val;
        }
        if w.iter().chain(x).all(|v| v.is_constant()) {
            return Var { idx: CONST, val: acc };
        }
        let v = self.push(acc);
        for (&a, &b) in w.iter().zip(x) {
            self.edge(a, b.val);
            self.edge(b, a.val);
        }
        *self.starts.last_mut().unwrap() = self.parents.len() as u32;
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_records_one_multiply() {
        let mut theta = None;
        let rec = Tape::record(|t| {
            let x = t.leaf(3.0);
            theta = Some(x);
            t.mul(x, x)
        })
        .unwrap();
        assert_eq!(rec.value, 9.0);
        assert_eq!(rec.tape.op_count(), 1);
        let g = rec.tape.backward(rec.output, 1.0);
        assert_eq!(g.as_slice(), &[6.0]);
        assert_eq!(g.wrt(theta.unwrap()), 6.0);
    }

    #[test]
    fn tanh_at_zero() {
        let rec = Tape::record(|t| {
            let x = t.leaf(0.0);
            t.activation(crate::ActivationKind::Tanh, x, 0)
        })
        .unwrap();
        assert_eq!(rec.value, 0.0);
        assert_eq!(rec.tape.backward(rec.output, 1.0).as_slice(), &[1.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut t = Tape::new();
        let _a = t.leaf(1.0);
        let _b = t.leaf(-2.0);
        let c = t.constant(5.0);
        let out = t.scale(2.0, c);
        let g = t.backward(out, 1.0);
        assert_eq!(g.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn untouched_leaf_gets_zero() {
        let mut t = Tape::new();
        let a = t.leaf(2.0);
        let b = t.leaf(7.0);
        let out = t.powi(a, 3);
        let g = t.backward(out, 2.0);
        assert_eq!(g.wrt(a), 24.0);
        assert_eq!(g.wrt(b), 0.0);
    }

    #[test]
    fn division_by_zero_poisons() {
        let err = Tape::record(|t| {
            let x = t.leaf(1.0);
            let z = t.leaf(0.0);
            let q = t.div(x, z);
            t.add(q, x)
        })
        .unwrap_err();
        assert_eq!(err, TapeError::Poisoned { node: 2 });
    }

    #[test]
    fn recording_is_deterministic() {
        let build = |t: &mut Tape| {
            let xs = t.leaves(&[0.3, -1.2, 2.0]);
            let d = t.dot(&xs, &xs);
            let s = t.logistic(d);
            t.mul(s, xs[1])
        };
        let a = Tape::record(build).unwrap();
        let b = Tape::record(build).unwrap();
        assert_eq!(a.tape.len(), b.tape.len());
        assert_eq!(a.tape.parents, b.tape.parents);
        assert_eq!(a.tape.partials, b.tape.partials);
        assert_eq!(a.value.to_bits(), b.value.to_bits());
    }

    #[test]
    fn shared_subexpressions_accumulate() {
        // f = (x·y) + (x·y)·x ; ∂f/∂x = y + 2xy, ∂f/∂y = x + x²
        let mut t = Tape::new();
        let x = t.leaf(1.5);
        let y = t.leaf(-0.5);
        let p = t.mul(x, y);
        let q = t.mul(p, x);
        let f = t.add(p, q);
        let g = t.backward(f, 1.0);
        assert!((g.wrt(x) - (-0.5 + 2.0 * 1.5 * -0.5)).abs() < 1e-15);
        assert!((g.wrt(y) - (1.5 + 1.5 * 1.5)).abs() < 1e-15);
    }
}
