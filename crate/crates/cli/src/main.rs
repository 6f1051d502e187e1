//! `ntp`: benchmarks, PINN training and profile evaluation.
//!
//! Exit status is 0 on success, 1 for usage or input errors, 2 when
//! something fails after the inputs were accepted.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use ntp_core::burgers_pinn::{lambda_range, true_profile_derivatives};
use ntp_core::combinatorics::build_faa_table;
use ntp_core::harness::{fit_scaling, run_bench_with, write_records_file, BenchConfig, BenchError, Method};
use ntp_core::network::forward_ntp;
use ntp_core::optim::{train, TrainConfig, TrainError};
use ntp_core::DenseNet;

#[derive(Parser)]
#[command(name = "ntp", version, about = "Higher-order network derivatives by n-TangentProp")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time n-TP against the nested-dual baseline over a grid.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a self-similar Burgers profile (Adam, then L-BFGS).
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a trained network with the exact profile, order by order.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        profile: u32,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        x_max: f64,
        #[arg(long, default_value_t = 201)]
        points: usize,
        /// Highest derivative order to compare.
        #[arg(long, default_value_t = 3)]
        orders: usize,
    },
    /// Print the partitions of n with their Faà di Bruno coefficients.
    Partitions {
        #[arg(long)]
        n: usize,
    },
}

enum Failure {
    User(anyhow::Error),
    Internal(anyhow::Error),
}

type Outcome = Result<(), Failure>;

fn user<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::User(e.into())
}

fn internal<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Internal(e.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Bench { config, out } => bench(&config, &out),
        Command::Train { config, out } => train_cmd(&config, &out),
        Command::Eval {
            checkpoint,
            profile,
            out,
            x_max,
            points,
            orders,
        } => eval(&checkpoint, profile, &out, x_max, points, orders),
        Command::Partitions { n } => partitions(n),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::User(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(e)) => {
            eprintln!("internal error: {e:#}");
            ExitCode::from(2)
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_sha256: String,
    seed: Option<u64>,
    versions: BTreeMap<&'static str, &'static str>,
    outputs: Vec<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_manifest(out: &Path, command: &str, config: &[u8], seed: Option<u64>) -> Outcome {
    let mut outputs: Vec<String> = fs::read_dir(out)
        .map_err(internal)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|name| name != "manifest.json")
        .collect();
    outputs.sort();
    let manifest = Manifest {
        command,
        config_sha256: sha256_hex(config),
        seed,
        versions: BTreeMap::from([
            ("ntp-cli", env!("CARGO_PKG_VERSION")),
            ("ntp-core", ntp_core::VERSION),
        ]),
        outputs,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(internal)? + "\n";
    fs::write(out.join("manifest.json"), text).map_err(internal)
}

fn read_config(path: &Path) -> Result<(Vec<u8>, String), Failure> {
    let bytes = fs::read(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(user)?;
    let text = String::from_utf8(bytes.clone())
        .with_context(|| format!("{} is not UTF-8", path.display()))
        .map_err(user)?;
    Ok((bytes, text))
}

fn create_out(out: &Path) -> Outcome {
    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(user)
}

#[derive(Serialize)]
struct ShapeFit {
    method: Method,
    depth: usize,
    width: usize,
    batch: usize,
    fit: ntp_core::harness::ScalingFit,
}

fn bench(config_path: &Path, out: &Path) -> Outcome {
    let (bytes, text) = read_config(config_path)?;
    let config = BenchConfig::from_toml(&text).map_err(user)?;
    config.validate().map_err(user)?;
    create_out(out)?;

    let mut last = 0;
    let records = run_bench_with(&config, |done, total| {
        let pct = done * 100 / total.max(1);
        if pct != last || done == total {
            last = pct;
            eprint!("\rbench {done}/{total} trials");
            if done == total {
                eprintln!();
            }
        }
    })
    .map_err(|e| match e {
        BenchError::EmptyGrid | BenchError::Config(_) => user(e),
        e => internal(e),
    })?;
    write_records_file(&out.join("bench.csv"), &records).map_err(internal)?;

    // One fit per network shape; shapes with too few orders are skipped.
    let mut shapes: Vec<(usize, usize, usize)> = records.iter().map(|r| (r.depth, r.width, r.batch)).collect();
    shapes.sort_unstable();
    shapes.dedup();
    let mut fits = Vec::new();
    for &(depth, width, batch) in &shapes {
        let rows: Vec<_> = records
            .iter()
            .filter(|r| (r.depth, r.width, r.batch) == (depth, width, batch))
            .cloned()
            .collect();
        for &method in &config.methods {
            if let Ok(fit) = fit_scaling(&rows, method) {
                fits.push(ShapeFit {
                    method,
                    depth,
                    width,
                    batch,
                    fit,
                });
            }
        }
    }
    let text = serde_json::to_string_pretty(&fits).map_err(internal)? + "\n";
    fs::write(out.join("scaling.json"), text).map_err(internal)?;
    write_manifest(out, "bench", &bytes, Some(config.seed))
}

fn train_cmd(config_path: &Path, out: &Path) -> Outcome {
    let (bytes, text) = read_config(config_path)?;
    let config = TrainConfig::from_toml(&text).map_err(user)?;
    create_out(out)?;
    let (_, report) = train(&config, Some(out)).map_err(|e| match e {
        TrainError::Config(_) | TrainError::Pinn(_) | TrainError::Network(_) => user(e),
        e => internal(e),
    })?;
    println!(
        "lambda {:.6} (error {:.2e}), final loss {:.3e}, {} L-BFGS iterations",
        report.lambda, report.lambda_error, report.final_loss, report.lbfgs_iterations
    );
    write_manifest(out, "train", &bytes, Some(config.seed))
}

fn eval(checkpoint: &Path, k: u32, out: &Path, x_max: f64, points: usize, orders: usize) -> Outcome {
    if k == 0 {
        return Err(user(anyhow!("--profile must be at least 1")));
    }
    if !(x_max > 0.0 && x_max.is_finite()) || points < 2 {
        return Err(user(anyhow!("need --x-max > 0 and --points ≥ 2")));
    }
    let bytes = fs::read(checkpoint)
        .with_context(|| format!("reading {}", checkpoint.display()))
        .map_err(user)?;
    let net = DenseNet::deserialize(&bytes)
        .with_context(|| format!("loading {}", checkpoint.display()))
        .map_err(user)?;
    let table = build_faa_table(orders.max(1)).map_err(user)?;
    create_out(out)?;

    let xs: Vec<f64> = (0..points)
        .map(|i| -x_max + 2.0 * x_max * i as f64 / (points - 1) as f64)
        .collect();
    let learned = forward_ntp(&net, &xs, orders, &table).map_err(internal)?;
    let exact = xs
        .iter()
        .map(|&x| true_profile_derivatives(k, 1.0, x, orders))
        .collect::<Result<Vec<_>, _>>()
        .map_err(internal)?;

    let mut summary = Vec::new();
    for m in 0..=orders {
        let path = out.join(format!("profile_d{m}.csv"));
        let file = fs::File::create(&path).map_err(internal)?;
        let mut w = BufWriter::new(file);
        writeln!(w, "x,learned,exact,abs_error").map_err(internal)?;
        let mut worst = 0.0f64;
        for (i, &x) in xs.iter().enumerate() {
            let (a, b) = (learned.get(m)[i], exact[i][m]);
            worst = worst.max((a - b).abs());
            writeln!(w, "{x},{a},{b},{}", (a - b).abs()).map_err(internal)?;
        }
        w.flush().map_err(internal)?;
        println!("order {m}: max |learned - exact| = {worst:.3e}");
        summary.push(serde_json::json!({ "order": m, "max_abs_error": worst }));
    }
    let (lo, hi) = lambda_range(k);
    let info = serde_json::json!({
        "profile_k": k,
        "target_lambda": 1.0 / (2 * k) as f64,
        "lambda_range": [lo, hi],
        "orders": summary,
    });
    let text = serde_json::to_string_pretty(&info).map_err(internal)? + "\n";
    fs::write(out.join("eval.json"), text).map_err(internal)?;

    // The "config" of an evaluation is its arguments plus the checkpoint.
    let args = format!(
        "checkpoint_sha256={}\nprofile={k}\nx_max={x_max}\npoints={points}\norders={orders}\n",
        sha256_hex(&bytes)
    );
    write_manifest(out, "eval", args.as_bytes(), net.seed())
}

fn partitions(n: usize) -> Outcome {
    let table = build_faa_table(n).map_err(user)?;
    let stdout = io::stdout();
    let mut w = stdout.lock();
    for e in table.entries(n) {
        writeln!(w, "{},{}", e.partition, e.coefficient).map_err(internal)?;
    }
    Ok(())
}
