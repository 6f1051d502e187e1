//! Exact higher-order input derivatives of dense networks in quasilinear
//! time (n-TangentProp), with a self-similar Burgers PINN trainer and a
//! benchmark harness comparing against nested forward-mode duals.

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod burgers_pinn;
pub mod combinatorics;
pub mod diffcore;
pub mod harness;
pub mod network;
pub mod optim;

pub use combinatorics::{
    build_faa_table, enumerate_partitions, faa_coefficient, partition_count, CombinatoricsError,
    FaaEntry, FaaTable, PartitionVector, MAX_ORDER,
};
pub use diffcore::{
    activation_stack, nested_derivative, nested_derivatives, ActivationKind, Analytic, Arith,
    DualError, Gradients, NestedDual, Plain, Tangent, TangentCtx, Tape, TapeError, TapeVar, Var,
};
pub use network::{
    forward_ntp, forward_ntp_with, Architecture, CheckpointError, DenseNet, DerivativeStack,
    NetworkError, NtpStats,
};
