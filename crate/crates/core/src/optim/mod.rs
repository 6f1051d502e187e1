//! Optimisers and the two-phase training schedule.

mod adam;
mod lbfgs;
mod schedule;

use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use lbfgs::{lbfgs_step, LbfgsConfig, LbfgsState, StepReport};
pub use schedule::{
    run_schedule, train, MetricsRow, OptimizerConfig, PinnObjective, ProblemConfig, TrainConfig,
    TrainError, TrainReport,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient at trainable index {index}")]
    NonFiniteGradient { index: usize },
    #[error("line search found no decrease after {evaluations} evaluations")]
    StepRejected { evaluations: usize },
    #[error("objective failed: {0}")]
    Objective(String),
}

/// A differentiable scalar objective over a flat trainable vector.
pub trait Objective {
    /// Value and full gradient: one forward and one backward pass.
    fn value_and_gradient(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64, OptimError>;

    /// Value and `∇f(x)·d`. The default goes through the full gradient;
    /// implementations override it with a forward-only sweep. Non-finite
    /// values are reported as such, not as errors.
    fn value_and_directional(&mut self, x: &[f64], d: &[f64]) -> Result<(f64, f64), OptimError> {
        let mut g = vec![0.0; x.len()];
        let f = self.value_and_gradient(x, &mut g)?;
        Ok((f, g.iter().zip(d).map(|(a, b)| a * b).sum()))
    }
}
