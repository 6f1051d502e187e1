//! Timing harness: n-TP against the nested-dual baseline over a grid of
//! network shapes, batch sizes and derivative orders.
//!
//! Each trial differentiates `mean_b y_n(x_b)²` with respect to every
//! parameter. Forward (recording) and backward sweeps are timed separately
//! on a monotonic clock; building the loss sits between the two timed
//! regions. Warmup runs go first, then every (cell, trial) pair of the grid
//! runs in one seeded global shuffle so drift in machine state spreads
//! evenly over cells. Tapes and buffers are reused across trials.

pub mod baseline;
mod scaling;

use std::collections::HashMap;
use std::io;
use std::path::Path;
use std::time::Instant;

use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::combinatorics::{build_faa_table, FaaTable};
use crate::diffcore::{ActivationKind, Arith, Tape, MAX_ACTIVATION_ORDER};
use crate::network::{forward_ntp_with, Architecture, DenseNet, NetworkError};

pub use baseline::{baseline_memory_bytes, slots_per_sample, BaselineTape};
pub use scaling::{fit_points, fit_scaling, LinearFit, ScalingFit, ScalingModel};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("empty experiment grid")]
    EmptyGrid,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("config parse: {0}")]
    Toml(#[from] toml::de::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ntp,
    NestedBaseline,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ntp => "ntp",
            Method::NestedBaseline => "nested_baseline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    /// Over the memory budget, or the allocation itself failed.
    Oom,
    /// Non-finite network output.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    /// Hidden layer counts.
    pub depths: Vec<usize>,
    /// Hidden layer widths.
    pub widths: Vec<usize>,
    /// Powers of two.
    pub batch_sizes: Vec<usize>,
    pub derivative_orders: Vec<usize>,
    pub trials: usize,
    pub warmup: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    /// Cap on the baseline's stored dual values.
    pub memory_budget_bytes: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            depths: vec![2, 3, 4, 6],
            widths: vec![16, 24, 48, 96],
            batch_sizes: (6..=10).map(|e| 1 << e).collect(),
            derivative_orders: (1..=9).collect(),
            trials: 100,
            warmup: 3,
            methods: vec![Method::Ntp, Method::NestedBaseline],
            seed: 0,
            memory_budget_bytes: 4 << 30,
        }
    }
}

impl BenchConfig {
    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        Ok(toml::from_str(text)?)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.depths.is_empty()
            || self.widths.is_empty()
            || self.batch_sizes.is_empty()
            || self.derivative_orders.is_empty()
            || self.methods.is_empty()
        {
            return Err(BenchError::EmptyGrid);
        }
        let bad = |msg: String| Err(BenchError::Config(msg));
        if self.trials == 0 {
            return bad("trials must be positive".into());
        }
        if let Some(d) = self.depths.iter().find(|&&d| d == 0) {
            return bad(format!("depth {d} has no hidden layer"));
        }
        if self.widths.contains(&0) {
            return bad("widths must be positive".into());
        }
        if let Some(b) = self.batch_sizes.iter().find(|b| !b.is_power_of_two()) {
            return bad(format!("batch size {b} is not a power of two"));
        }
        let max = MAX_ACTIVATION_ORDER - 1;
        if let Some(n) = self.derivative_orders.iter().find(|&&n| n == 0 || n > max) {
            return bad(format!("derivative order {n} outside 1..={max}"));
        }
        Ok(())
    }

    /// Cells in reporting order: method, depth, width, batch, n.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &method in &self.methods {
            for &depth in &self.depths {
                for &width in &self.widths {
                    for &batch in &self.batch_sizes {
                        for &n in &self.derivative_orders {
                            out.push(Cell { method, depth, width, batch, n });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cell {
    pub method: Method,
    pub depth: usize,
    pub width: usize,
    pub batch: usize,
    pub n: usize,
}

impl Cell {
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![1];
        w.extend(std::iter::repeat_n(self.width, self.depth));
        w.push(1);
        w
    }
}

/// One row of the results table. Times are means in seconds over `trials`
/// measurements and are absent unless `status` is `ok`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub method: Method,
    pub depth: usize,
    pub width: usize,
    pub batch: usize,
    pub n: usize,
    pub status: CellStatus,
    pub trials: usize,
    pub mean_forward_s: Option<f64>,
    pub mean_backward_s: Option<f64>,
    pub mean_total_s: Option<f64>,
    /// Tape footprint (measured for n-TP, required for the baseline).
    pub memory_bytes: u64,
}

#[derive(Default)]
struct Acc {
    forward: f64,
    backward: f64,
    count: usize,
    status: Option<CellStatus>,
    memory: u64,
}

struct Workspace {
    table: FaaTable,
    tape: Tape,
    adj: Vec<f64>,
    baseline: BaselineTape,
    grads: Vec<f64>,
    seeds: Vec<f64>,
}

struct Setup {
    arch: Architecture,
    params: Vec<f64>,
    xs: Vec<f64>,
}

enum Trial {
    Done { forward: f64, backward: f64, memory: u64 },
    Oom,
    Failed,
}

/// Runs the grid and returns one record per cell in reporting order.
pub fn run_bench(config: &BenchConfig) -> Result<Vec<BenchRecord>, BenchError> {
    run_bench_with(config, |_, _| {})
}

/// [`run_bench`] with a callback receiving (completed, total) trial counts.
pub fn run_bench_with<F>(config: &BenchConfig, mut progress: F) -> Result<Vec<BenchRecord>, BenchError>
where
    F: FnMut(usize, usize),
{
    config.validate()?;
    let cells = config.cells();
    let max_n = *config.derivative_orders.iter().max().unwrap_or(&1);
    let mut ws = Workspace {
        table: build_faa_table(max_n).map_err(|e| BenchError::Config(e.to_string()))?,
        tape: Tape::new(),
        adj: Vec::new(),
        baseline: BaselineTape::new(),
        grads: Vec::new(),
        seeds: Vec::new(),
    };

    // Nets and inputs depend only on shape, so both methods see the same ones.
    let mut setups: HashMap<(usize, usize, usize), Setup> = HashMap::new();
    let mut accs: Vec<Acc> = Vec::with_capacity(cells.len());
    for cell in &cells {
        let key = (cell.depth, cell.width, cell.batch);
        setups.entry(key).or_insert_with(|| {
            let salt = (cell.depth as u64) << 40 ^ (cell.width as u64) << 20 ^ cell.batch as u64;
            let net = DenseNet::init(&cell.widths(), ActivationKind::Tanh, config.seed ^ salt)
                .expect("validated widths");
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(salt));
            let xs = Uniform::new_inclusive(-1.0, 1.0).sample_iter(&mut rng).take(cell.batch).collect();
            Setup {
                arch: net.architecture().clone(),
                params: net.params().to_vec(),
                xs,
            }
        });
        let mut acc = Acc::default();
        if cell.method == Method::NestedBaseline {
            let need = baseline_memory_bytes(&setups[&key].arch, cell.batch, cell.n);
            acc.memory = u64::try_from(need).unwrap_or(u64::MAX);
            if need > config.memory_budget_bytes as u128 {
                acc.status = Some(CellStatus::Oom);
            }
        }
        accs.push(acc);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut runnable: Vec<usize> = (0..cells.len()).filter(|&i| accs[i].status.is_none()).collect();
    runnable.shuffle(&mut rng);
    for &i in &runnable {
        let setup = &setups[&(cells[i].depth, cells[i].width, cells[i].batch)];
        for _ in 0..config.warmup {
            if !record_outcome(&mut accs[i], run_trial(&mut ws, cells[i], setup), false) {
                break;
            }
        }
    }

    let mut items: Vec<usize> = runnable
        .iter()
        .flat_map(|&i| std::iter::repeat_n(i, config.trials))
        .collect();
    items.shuffle(&mut rng);
    let total = items.len();
    for (done, &i) in items.iter().enumerate() {
        if accs[i].status.is_none() {
            let setup = &setups[&(cells[i].depth, cells[i].width, cells[i].batch)];
            let outcome = run_trial(&mut ws, cells[i], setup);
            record_outcome(&mut accs[i], outcome, true);
        }
        progress(done + 1, total);
    }

    Ok(cells
        .iter()
        .zip(accs)
        .map(|(cell, acc)| {
            let status = acc.status.unwrap_or(CellStatus::Ok);
            let ok = status == CellStatus::Ok && acc.count > 0;
            let mean = |s: f64| ok.then(|| s / acc.count as f64);
            BenchRecord {
                method: cell.method,
                depth: cell.depth,
                width: cell.width,
                batch: cell.batch,
                n: cell.n,
                status,
                trials: if ok { acc.count } else { 0 },
                mean_forward_s: mean(acc.forward),
                mean_backward_s: mean(acc.backward),
                mean_total_s: mean(acc.forward + acc.backward),
                memory_bytes: acc.memory,
            }
        })
        .collect())
}

/// Folds one trial into its cell. Returns false once the cell has failed.
fn record_outcome(acc: &mut Acc, outcome: Trial, timed: bool) -> bool {
    match outcome {
        Trial::Done { forward, backward, memory } => {
            if timed {
                acc.forward += forward;
                acc.backward += backward;
                acc.count += 1;
            }
            acc.memory = acc.memory.max(memory);
            true
        }
        Trial::Oom => {
            acc.status = Some(CellStatus::Oom);
            false
        }
        Trial::Failed => {
            acc.status = Some(CellStatus::Failed);
            false
        }
    }
}

fn run_trial(ws: &mut Workspace, cell: Cell, setup: &Setup) -> Trial {
    match cell.method {
        Method::Ntp => ntp_trial(ws, cell.n, setup),
        Method::NestedBaseline => baseline_trial(ws, cell.n, setup),
    }
}

fn ntp_trial(ws: &mut Workspace, n: usize, setup: &Setup) -> Trial {
    let tape = &mut ws.tape;
    let start = Instant::now();
    tape.clear();
    let params = tape.leaves(&setup.params);
    let xs: Vec<_> = setup.xs.iter().map(|&x| tape.constant(x)).collect();
    let stack = forward_ntp_with(tape, &setup.arch, &params, &xs, n, &ws.table, None);
    let forward = start.elapsed().as_secs_f64();
    let Ok(stack) = stack else {
        return Trial::Failed;
    };

    let mut squares: Vec<_> = stack.get(n).to_vec();
    for v in squares.iter_mut() {
        *v = tape.square(*v);
    }
    let sum = tape.sum(&squares);
    let loss = tape.scale(1.0 / setup.xs.len() as f64, sum);
    if !loss.value().is_finite() {
        return Trial::Failed;
    }

    let start = Instant::now();
    tape.backward_into(loss, 1.0, &mut ws.adj);
    let grads = tape.leaf_adjoints(&ws.adj);
    let backward = start.elapsed().as_secs_f64();
    std::hint::black_box(grads);
    Trial::Done {
        forward,
        backward,
        memory: tape.memory_bytes() as u64,
    }
}

fn baseline_trial(ws: &mut Workspace, n: usize, setup: &Setup) -> Trial {
    let start = Instant::now();
    let ys = ws.baseline.forward(&setup.arch, &setup.params, &setup.xs, n);
    let forward = start.elapsed().as_secs_f64();
    let Ok(ys) = ys else {
        return Trial::Oom;
    };

    let scale = 2.0 / ys.len() as f64;
    ws.seeds.clear();
    ws.seeds.extend(ys.iter().map(|y| scale * y));
    if ws.seeds.iter().any(|s| !s.is_finite()) {
        return Trial::Failed;
    }
    ws.grads.resize(setup.params.len(), 0.0);

    let start = Instant::now();
    ws.baseline.backward(&ws.seeds, &mut ws.grads);
    let backward = start.elapsed().as_secs_f64();
    std::hint::black_box(&ws.grads);
    Trial::Done {
        forward,
        backward,
        memory: ws.baseline.memory_bytes() as u64,
    }
}

/// Writes records as CSV with a header; missing times are empty fields.
pub fn write_records_csv<W: io::Write>(out: W, records: &[BenchRecord]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv<R: io::Read>(input: R) -> Result<Vec<BenchRecord>, BenchError> {
    let mut r = csv::Reader::from_reader(input);
    let rows = r.deserialize().collect::<Result<Vec<BenchRecord>, _>>()?;
    Ok(rows)
}

pub fn write_records_file(path: &Path, records: &[BenchRecord]) -> Result<(), BenchError> {
    let file = std::fs::File::create(path)?;
    write_records_csv(io::BufWriter::new(file), records)
}
