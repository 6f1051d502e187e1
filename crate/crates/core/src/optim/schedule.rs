//! Adam followed by L-BFGS on the self-similar Burgers loss.
//!
//! The trainable vector is the network parameters followed by `lambda_raw`.
//! One epoch is one full-batch gradient evaluation.

use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::burgers_pinn::{total_loss_with, LossBreakdown, LossConfig, PinnError, SelfSimilarProblem};
use crate::combinatorics::{build_faa_table, FaaTable};
use crate::diffcore::{ActivationKind, Arith, Plain, Tangent, TangentCtx, Tape};
use crate::network::{Architecture, DenseNet, NetworkError};

use super::{adam_step, lbfgs_step, AdamConfig, AdamState, LbfgsConfig, LbfgsState, Objective, OptimError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Pinn(#[from] PinnError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("training aborted at epoch {epoch}: non-finite gradient for {component}")]
    Aborted { epoch: usize, component: String },
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    pub profile_k: u32,
    pub x_max: f64,
    pub n_colloc: usize,
    pub n_origin: usize,
    pub origin_halfwidth: f64,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            profile_k: 1,
            x_max: 2.0,
            n_colloc: 256,
            n_origin: 33,
            origin_halfwidth: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub adam_epochs: usize,
    pub lbfgs_epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lbfgs_window: usize,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        let lbfgs = LbfgsConfig::default();
        Self {
            adam_epochs: 2000,
            lbfgs_epochs: 3000,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            lbfgs_window: lbfgs.window,
            c1: lbfgs.c1,
            c2: lbfgs.c2,
            max_line_search: lbfgs.max_line_search,
        }
    }
}

impl OptimizerConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn lbfgs(&self) -> LbfgsConfig {
        LbfgsConfig {
            window: self.lbfgs_window,
            c1: self.c1,
            c2: self.c2,
            max_line_search: self.max_line_search,
        }
    }
}

/// Training configuration, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub widths: Vec<usize>,
    pub activation: ActivationKind,
    pub problem: ProblemConfig,
    /// Defaults to the profile's standard weights when omitted.
    pub loss: Option<LossConfig>,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            widths: vec![1, 24, 24, 24, 1],
            activation: ActivationKind::Tanh,
            problem: ProblemConfig::default(),
            loss: None,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))
    }

    pub fn loss_config(&self) -> LossConfig {
        self.loss
            .clone()
            .unwrap_or_else(|| LossConfig::for_profile(self.problem.profile_k))
    }

    pub fn build_problem(&self) -> Result<SelfSimilarProblem, TrainError> {
        let p = &self.problem;
        Ok(SelfSimilarProblem::new(
            p.profile_k,
            p.x_max,
            p.n_colloc,
            p.n_origin,
            p.origin_halfwidth,
        )?)
    }
}

/// The PINN loss as an optimisation objective over `[params…, lambda_raw]`.
///
/// Gradients come from one taped forward pass and a reverse sweep; the
/// directional derivatives used by the line search come from a tangent
/// sweep with no tape.
pub struct PinnObjective {
    arch: Architecture,
    problem: SelfSimilarProblem,
    loss: LossConfig,
    table: FaaTable,
    tape: Tape,
    adjoints: Vec<f64>,
    last: Option<LossBreakdown<f64>>,
}

impl PinnObjective {
    pub fn new(arch: Architecture, problem: SelfSimilarProblem, loss: LossConfig) -> Result<Self, TrainError> {
        loss.validate(&problem)?;
        let table = build_faa_table(loss.stack_order()).map_err(|e| TrainError::Config(e.to_string()))?;
        Ok(Self {
            arch,
            problem,
            loss,
            table,
            tape: Tape::new(),
            adjoints: Vec::new(),
            last: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.arch.param_count() + 1
    }

    /// Breakdown from the most recent gradient evaluation.
    pub fn last_breakdown(&self) -> Option<LossBreakdown<f64>> {
        self.last
    }

    /// Plain loss at `x`.
    pub fn breakdown(&self, x: &[f64]) -> Result<LossBreakdown<f64>, PinnError> {
        let m = self.arch.param_count();
        total_loss_with(&mut Plain, &self.arch, &x[..m], x[m], &self.problem, &self.loss, &self.table)
    }
}

fn is_poison(e: &PinnError) -> bool {
    matches!(
        e,
        PinnError::Poisoned { .. } | PinnError::Network(NetworkError::Poisoned { .. })
    )
}

impl Objective for PinnObjective {
    fn value_and_gradient(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64, OptimError> {
        let m = self.arch.param_count();
        self.tape.clear();
        let leaves = self.tape.leaves(x);
        let result = total_loss_with(
            &mut self.tape,
            &self.arch,
            &leaves[..m],
            leaves[m],
            &self.problem,
            &self.loss,
            &self.table,
        );
        let breakdown = match result {
            Ok(b) => b,
            Err(e) if is_poison(&e) => {
                self.last = None;
                grad.iter_mut().for_each(|g| *g = f64::NAN);
                return Ok(f64::NAN);
            }
            Err(e) => return Err(OptimError::Objective(e.to_string())),
        };
        self.tape.backward_into(breakdown.total, 1.0, &mut self.adjoints);
        // leaves were created first, so their indices are 0..dim
        grad.copy_from_slice(&self.adjoints[..x.len()]);
        let value = |v: crate::diffcore::Var| v.value();
        self.last = Some(LossBreakdown {
            total: value(breakdown.total),
            residual: value(breakdown.residual),
            sobolev: value(breakdown.sobolev),
            origin: value(breakdown.origin),
            bc: value(breakdown.bc),
            anchor: value(breakdown.anchor),
        });
        Ok(value(breakdown.total))
    }

    fn value_and_directional(&mut self, x: &[f64], d: &[f64]) -> Result<(f64, f64), OptimError> {
        let m = self.arch.param_count();
        let seeded: Vec<Tangent> = x.iter().zip(d).map(|(&v, &t)| Tangent::new(v, t)).collect();
        let mut ctx = TangentCtx;
        match total_loss_with(
            &mut ctx,
            &self.arch,
            &seeded[..m],
            seeded[m],
            &self.problem,
            &self.loss,
            &self.table,
        ) {
            Ok(b) => Ok((ctx.value(b.total), b.total.d)),
            Err(e) if is_poison(&e) => Ok((f64::NAN, f64::NAN)),
            Err(e) => Err(OptimError::Objective(e.to_string())),
        }
    }
}

/// One metrics CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub phase: String,
    pub loss: f64,
    pub residual: f64,
    pub sobolev: f64,
    pub origin: f64,
    pub bc: f64,
    pub anchor: f64,
    pub lambda: f64,
    pub lambda_grad: f64,
    pub grad_norm: f64,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub profile_k: u32,
    pub seed: Option<u64>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub lambda: f64,
    pub lambda_raw: f64,
    pub lambda_error: f64,
    pub adam_epochs: usize,
    pub lbfgs_iterations: usize,
    /// Forward passes inside L-BFGS iterations (line-search trials plus the
    /// gradient evaluation at each accepted point).
    pub lbfgs_forwards: usize,
    pub lbfgs_backwards: usize,
    pub lbfgs_line_search_evals: usize,
    pub lbfgs_fallbacks: usize,
    pub wall_time_s: f64,
    pub stopped_early: Option<String>,
    #[serde(skip)]
    pub metrics: Vec<MetricsRow>,
}

impl TrainReport {
    pub fn forwards_per_lbfgs_iteration(&self) -> f64 {
        self.lbfgs_forwards as f64 / self.lbfgs_iterations.max(1) as f64
    }

    pub fn backwards_per_lbfgs_iteration(&self) -> f64 {
        self.lbfgs_backwards as f64 / self.lbfgs_iterations.max(1) as f64
    }
}

struct Sink {
    dir: PathBuf,
    metrics: csv::Writer<BufWriter<File>>,
}

impl Sink {
    fn open(dir: &Path) -> Result<Self, TrainError> {
        fs::create_dir_all(dir)?;
        let file = File::create(dir.join("metrics.csv"))?;
        let metrics = csv::Writer::from_writer(BufWriter::new(file));
        Ok(Self {
            dir: dir.to_path_buf(),
            metrics,
        })
    }

    fn row(&mut self, row: &MetricsRow) -> Result<(), TrainError> {
        self.metrics.serialize(row)?;
        Ok(())
    }

    fn checkpoint(&mut self, name: &str, net: &DenseNet) -> Result<(), TrainError> {
        self.metrics.flush()?;
        fs::write(self.dir.join(name), net.serialize())?;
        Ok(())
    }
}

struct Recorder {
    start: Instant,
    rows: Vec<MetricsRow>,
    sink: Option<Sink>,
}

impl Recorder {
    fn push(
        &mut self,
        epoch: usize,
        phase: &str,
        b: &LossBreakdown<f64>,
        lambda: f64,
        grad: &[f64],
    ) -> Result<(), TrainError> {
        let row = MetricsRow {
            epoch,
            phase: phase.to_string(),
            loss: b.total,
            residual: b.residual,
            sobolev: b.sobolev,
            origin: b.origin,
            bc: b.bc,
            anchor: b.anchor,
            lambda,
            lambda_grad: *grad.last().unwrap(),
            grad_norm: grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
            wall_time_ms: self.start.elapsed().as_secs_f64() * 1e3,
        };
        if let Some(s) = self.sink.as_mut() {
            s.row(&row)?;
        }
        self.rows.push(row);
        Ok(())
    }
}

fn component_name(index: usize, params: usize) -> String {
    if index == params {
        "lambda".to_string()
    } else {
        format!("network parameter {index}")
    }
}

fn write_back(net: &mut DenseNet, problem: &mut SelfSimilarProblem, x: &[f64]) {
    let m = net.param_count();
    net.set_params(&x[..m]);
    problem.lambda_raw = x[m];
}

/// Phase 1 Adam for `adam_epochs`, phase 2 L-BFGS for `lbfgs_epochs`.
///
/// With `out` set, writes `metrics.csv`, `checkpoint_adam.ckpt` at the phase
/// boundary, `checkpoint_final.ckpt` and `summary.json`. On failure the CSV
/// and the last good parameters are still flushed.
pub fn run_schedule(
    net: &mut DenseNet,
    problem: &mut SelfSimilarProblem,
    loss: &LossConfig,
    optimizer: &OptimizerConfig,
    out: Option<&Path>,
) -> Result<TrainReport, TrainError> {
    let mut recorder = Recorder {
        start: Instant::now(),
        rows: Vec::new(),
        sink: out.map(Sink::open).transpose()?,
    };
    let result = schedule_inner(net, problem, loss, optimizer, &mut recorder);
    if let Some(sink) = recorder.sink.as_mut() {
        sink.checkpoint("checkpoint_final.ckpt", net)?;
    }
    let mut report = result?;
    report.wall_time_s = recorder.start.elapsed().as_secs_f64();
    report.metrics = std::mem::take(&mut recorder.rows);
    if let Some(dir) = out {
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&report).unwrap() + "\n")?;
    }
    Ok(report)
}

fn schedule_inner(
    net: &mut DenseNet,
    problem: &mut SelfSimilarProblem,
    loss: &LossConfig,
    optimizer: &OptimizerConfig,
    rec: &mut Recorder,
) -> Result<TrainReport, TrainError> {
    let m = net.param_count();
    let mut obj = PinnObjective::new(net.architecture().clone(), problem.clone(), loss.clone())?;
    let mut x: Vec<f64> = net.params().to_vec();
    x.push(problem.lambda_raw);
    let mut grad = vec![0.0; x.len()];

    let lambda_of = |x: &[f64], p: &SelfSimilarProblem| {
        crate::burgers_pinn::constrain_lambda(x[m], p.lambda_range())
    };

    let initial = obj.value_and_gradient(&x, &mut grad)?;
    let b = obj.last_breakdown().ok_or(PinnError::Poisoned { component: "total" })?;
    rec.push(0, "init", &b, lambda_of(&x, problem), &grad)?;

    let mut report = TrainReport {
        profile_k: problem.k(),
        seed: net.seed(),
        initial_loss: initial,
        final_loss: initial,
        lambda: lambda_of(&x, problem),
        lambda_raw: x[m],
        lambda_error: 0.0,
        adam_epochs: 0,
        lbfgs_iterations: 0,
        lbfgs_forwards: 0,
        lbfgs_backwards: 0,
        lbfgs_line_search_evals: 0,
        lbfgs_fallbacks: 0,
        wall_time_s: 0.0,
        stopped_early: None,
        metrics: Vec::new(),
    };

    let mut adam = AdamState::new(x.len(), optimizer.adam());
    for epoch in 1..=optimizer.adam_epochs {
        if epoch > 1 {
            obj.value_and_gradient(&x, &mut grad)?;
        }
        let Some(b) = obj.last_breakdown() else {
            write_back(net, problem, &x);
            return Err(TrainError::Aborted {
                epoch,
                component: "loss".into(),
            });
        };
        rec.push(epoch, "adam", &b, lambda_of(&x, problem), &grad)?;
        if let Err(OptimError::NonFiniteGradient { index }) = adam_step(&mut adam, &mut x, &grad) {
            write_back(net, problem, &x);
            return Err(TrainError::Aborted {
                epoch,
                component: component_name(index, m),
            });
        }
        report.adam_epochs = epoch;
    }
    write_back(net, problem, &x);
    if let Some(sink) = rec.sink.as_mut() {
        sink.checkpoint("checkpoint_adam.ckpt", net)?;
    }

    if optimizer.lbfgs_epochs > 0 {
        let mut state = LbfgsState::new(x.len(), optimizer.lbfgs());
        // the starting gradient is not counted as an iteration
        state.prime(&mut obj, &x)?;
        let mut retried = false;
        let mut iteration = 0;
        while iteration < optimizer.lbfgs_epochs {
            let epoch = optimizer.adam_epochs + iteration + 1;
            match lbfgs_step(&mut state, &mut obj, &mut x) {
                Ok(r) if r.converged => {
                    report.stopped_early = Some(format!("zero gradient at epoch {epoch}"));
                    break;
                }
                Ok(r) => {
                    retried = false;
                    iteration += 1;
                    report.lbfgs_iterations += 1;
                    report.lbfgs_forwards += r.forwards;
                    report.lbfgs_backwards += r.backwards;
                    report.lbfgs_line_search_evals += r.evaluations;
                    report.lbfgs_fallbacks += r.fallback as usize;
                    let b = obj.last_breakdown().expect("accepted point is finite");
                    rec.push(epoch, "lbfgs", &b, lambda_of(&x, problem), state.gradient())?;
                }
                Err(OptimError::StepRejected { .. }) if !retried => {
                    retried = true;
                    state.reset_history();
                }
                Err(OptimError::StepRejected { evaluations }) => {
                    report.stopped_early = Some(format!(
                        "line search rejected at epoch {epoch} after {evaluations} evaluations"
                    ));
                    break;
                }
                Err(e) => {
                    write_back(net, problem, &x);
                    return Err(e.into());
                }
            }
        }
    }

    write_back(net, problem, &x);
    let final_b = obj.breakdown(&x)?;
    report.final_loss = final_b.total;
    report.lambda = problem.lambda();
    report.lambda_raw = problem.lambda_raw;
    report.lambda_error = problem.lambda_error();
    Ok(report)
}

/// Builds the network and problem from `config` and runs the schedule.
pub fn train(config: &TrainConfig, out: Option<&Path>) -> Result<(DenseNet, TrainReport), TrainError> {
    let mut net = DenseNet::init(&config.widths, config.activation, config.seed)?;
    let mut problem = config.build_problem()?;
    let loss = config.loss_config();
    loss.validate(&problem)?;
    let report = run_schedule(&mut net, &mut problem, &loss, &config.optimizer, out)?;
    Ok((net, report))
}
