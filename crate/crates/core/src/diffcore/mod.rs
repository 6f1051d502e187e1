//! Differentiation engines: activation derivative stacks, a reverse-mode
//! tape, forward tangents, and nested duals used as the exact exponential
//! reference.

mod activation;
mod arith;
mod nested;
mod tape;

pub use activation::{activation_stack, ActivationKind, MAX_ACTIVATION_ORDER};
pub use arith::{logistic, Arith, Plain, Tangent, TangentCtx};
pub(crate) use arith::dot_f64;
pub use nested::{
    nested_derivative, nested_derivatives, nested_derivatives_with_limit, subset_mul,
    subset_mul_adjoint, tanh_into, Analytic, DualError, NestedDual, DEFAULT_MAX_DEPTH,
};
pub use tape::{Gradients, Recording, Tape, TapeError, TapeVar, Var};
