//! `gntk` — build graph neural tangent kernels, validate the library's
//! numerical claims, benchmark the aggregation backends, and run kernel
//! ridge regression.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gntk::graph::{dataset_from_json, load_tu_dataset, Dataset};
use gntk::kernel::{build_kernel, Backend, GntkConfig, KernelMatrix, Scaling};
use gntk::linalg::{DenseMatrix, DenseVector};
use gntk::regression::{
    gen_diagnostics, krr_fit_predict, mse, synthesize_labels, LabelModel,
};
use gntk_cli::config::{
    resolve_bound_constants, resolve_kernel_config, resolve_threads, ConfigFile, KernelFlags,
};
use gntk_cli::report::RunReport;
use gntk_cli::suites::{bench_backends, run_suite, BenchRow, Check, SuiteOptions, SUITE_NAMES};
use gntk_cli::synth::synthetic_dataset;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "gntk", version, about = "Graph neural tangent kernels with exact and sketched backends")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a kernel matrix and write it as binary + CSV + run report.
    Kernel(KernelArgs),
    /// Run a validation suite; exit 0 only if every check passes.
    Validate(ValidateArgs),
    /// Time each backend on the same dataset and emit a CSV.
    Bench(BenchArgs),
    /// Kernel ridge regression with real or synthetic labels.
    Regress(RegressArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// TU-format directory or native JSON dataset file.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Synthetic dataset as "<graphs>,<nodes>".
    #[arg(long, value_name = "GRAPHS,NODES")]
    synthetic: Option<String>,
    /// Flat key=value config file (flags take precedence).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (default: GNTK_THREADS or available parallelism).
    #[arg(long)]
    threads: Option<usize>,
    /// Aggregate/combine levels.
    #[arg(long = "L")]
    levels: Option<usize>,
    /// Fully-connected layers per combine.
    #[arg(long = "R")]
    fc_layers: Option<usize>,
    #[arg(long)]
    c_phi: Option<f64>,
    /// unit | inverse-degree | normalized
    #[arg(long)]
    scaling: Option<String>,
    /// sum | jk
    #[arg(long)]
    readout: Option<String>,
    /// naive-kron | decoupled | sketched
    #[arg(long)]
    backend: Option<String>,
    /// Sketch rows as a fraction of the node count, in (0, 1].
    #[arg(long)]
    sketch_ratio: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    clamp_eps: Option<f64>,
    /// arc-cosine | product-form
    #[arg(long)]
    combine: Option<String>,
}

#[derive(Args)]
struct KernelArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Output path for the binary kernel (CSV and report derive from it).
    #[arg(long, default_value = "kernel.bin")]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// kron | backends | closedform | trace | sketch-error | all
    #[arg(long)]
    suite: String,
    /// Reduced sizes and trial counts.
    #[arg(long)]
    fast: bool,
    /// Matrix order for the sketch-error experiment.
    #[arg(long)]
    n: Option<usize>,
    /// Trials per sketching rate.
    #[arg(long)]
    trials: Option<usize>,
    /// Output CSV for the sketch-error sweep.
    #[arg(long, default_value = "sketch_error.csv")]
    out: PathBuf,
    /// Error-bound constants "left,right,cross" (default: calibrated).
    #[arg(long, value_name = "L,R,C")]
    bound_constants: Option<String>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Repetitions to average.
    #[arg(long, default_value_t = 3)]
    runs: usize,
    #[arg(long, default_value = "bench.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct RegressArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Load a previously written kernel binary instead of building one.
    #[arg(long)]
    kernel: Option<PathBuf>,
    /// real | synthetic
    #[arg(long, default_value = "synthetic")]
    labels: String,
    /// Even-power terms of the synthetic label model.
    #[arg(long, default_value_t = 1)]
    synthetic_t: usize,
    /// Ridge parameter.
    #[arg(long, default_value_t = 1e-6)]
    lambda: f64,
    /// Train fraction.
    #[arg(long, default_value_t = 0.8)]
    split: f64,
    /// Write generalization diagnostics JSON here (requires an
    /// L=1, R=1 normalized configuration).
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

/// Errors mapped to exit codes: usage errors exit 2, computational or
/// check failures exit 1.
enum CliError {
    Usage(String),
    Compute(String),
    ChecksFailed(Vec<Check>),
}

impl From<gntk::Error> for CliError {
    fn from(e: gntk::Error) -> Self {
        CliError::Compute(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
        Err(CliError::Compute(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
        Err(CliError::ChecksFailed(failures)) => {
            eprintln!("{} check(s) failed:", failures.len());
            for check in failures {
                eprintln!("  FAIL {} — {}", check.name, check.details);
            }
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let threads = match &cli.command {
        Command::Kernel(a) => resolve_threads(a.common.threads),
        Command::Validate(a) => resolve_threads(a.common.threads),
        Command::Bench(a) => resolve_threads(a.common.threads),
        Command::Regress(a) => resolve_threads(a.common.threads),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Compute(format!("thread pool: {e}")))?;

    match cli.command {
        Command::Kernel(args) => cmd_kernel(args),
        Command::Validate(args) => cmd_validate(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Regress(args) => cmd_regress(args),
    }
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

fn load_config_file(path: &Option<PathBuf>) -> Result<ConfigFile, CliError> {
    match path {
        None => Ok(ConfigFile::default()),
        Some(p) => ConfigFile::load(p).map_err(CliError::Usage),
    }
}

fn kernel_flags(common: &CommonArgs) -> KernelFlags {
    KernelFlags {
        levels: common.levels,
        fc_layers: common.fc_layers,
        c_phi: common.c_phi,
        scaling: common.scaling.clone(),
        readout: common.readout.clone(),
        backend: common.backend.clone(),
        sketch_ratio: common.sketch_ratio,
        seed: common.seed,
        clamp_eps: common.clamp_eps,
        combine: common.combine.clone(),
    }
}

fn resolve_config(common: &CommonArgs) -> Result<GntkConfig, CliError> {
    let file = load_config_file(&common.config)?;
    resolve_kernel_config(&kernel_flags(common), &file).map_err(CliError::Usage)
}

/// Loads the dataset named by `--dataset`/`--synthetic`; reports how
/// many edges needed symmetrizing as a warning string.
fn load_dataset(common: &CommonArgs, seed: u64) -> Result<(Dataset, Vec<String>), CliError> {
    match (&common.dataset, &common.synthetic) {
        (Some(_), Some(_)) => Err(CliError::Usage(
            "--dataset and --synthetic are mutually exclusive".into(),
        )),
        (None, None) => Err(CliError::Usage(
            "one of --dataset or --synthetic is required".into(),
        )),
        (Some(path), None) => {
            if path.is_dir() {
                let loaded = load_tu_dataset(path)?;
                let mut warnings = Vec::new();
                if loaded.symmetrized_edges > 0 {
                    warnings.push(format!(
                        "{} directed edges lacked a reverse and were symmetrized",
                        loaded.symmetrized_edges
                    ));
                }
                Ok((loaded.dataset, warnings))
            } else if path.extension().is_some_and(|e| e == "json") {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
                Ok((dataset_from_json(&text)?, Vec::new()))
            } else {
                Err(CliError::Usage(format!(
                    "{} is neither a directory nor a .json file",
                    path.display()
                )))
            }
        }
        (None, Some(spec)) => {
            let (n, nodes) = parse_synthetic(spec)?;
            Ok((synthetic_dataset(n, nodes, seed), Vec::new()))
        }
    }
}

fn parse_synthetic(spec: &str) -> Result<(usize, usize), CliError> {
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    let parse = |s: &str| {
        s.parse::<usize>()
            .ok()
            .filter(|v| *v >= 1)
            .ok_or_else(|| CliError::Usage(format!("--synthetic expects '<graphs>,<nodes>', got '{spec}'")))
    };
    match parts.as_slice() {
        [a, b] => Ok((parse(a)?, parse(b)?)),
        _ => Err(CliError::Usage(format!(
            "--synthetic expects '<graphs>,<nodes>', got '{spec}'"
        ))),
    }
}

// ---------------------------------------------------------------------------
// kernel
// ---------------------------------------------------------------------------

fn cmd_kernel(args: KernelArgs) -> Result<(), CliError> {
    let cfg = resolve_config(&args.common)?;
    let (ds, warnings) = load_dataset(&args.common, cfg.seed)?;

    let kernel = build_kernel(&ds, &cfg)?;

    let bin_path = args.out.clone();
    let csv_path = bin_path.with_extension("csv");
    let report_path = bin_path.with_extension("report.json");

    let mut file = std::fs::File::create(&bin_path)
        .map_err(|e| CliError::Compute(format!("{}: {e}", bin_path.display())))?;
    kernel.write_binary(&mut file)?;
    std::fs::write(&csv_path, kernel.to_csv())
        .map_err(|e| CliError::Compute(format!("{}: {e}", csv_path.display())))?;

    let mut report = RunReport::new("kernel", cfg);
    for w in warnings {
        report.warning(w);
    }
    if kernel.clamp_events > 0 {
        report.warning(format!(
            "{} correlation clamp events during combine stages",
            kernel.clamp_events
        ));
    }
    report
        .timing("init", kernel.stage_times.init_ms)
        .timing("aggregate", kernel.stage_times.aggregate_ms)
        .timing("combine", kernel.stage_times.combine_ms)
        .timing("readout", kernel.stage_times.readout_ms)
        .output(&bin_path)
        .output(&csv_path)
        .output(&report_path);
    report
        .write(&report_path)
        .map_err(|e| CliError::Compute(format!("{}: {e}", report_path.display())))?;

    println!(
        "kernel {}x{} [{}] config {}",
        ds.len(),
        ds.len(),
        kernel.backend.as_str(),
        kernel.config_hash
    );
    println!("stage      time_ms");
    println!("init       {:>10.3}", kernel.stage_times.init_ms);
    println!("aggregate  {:>10.3}", kernel.stage_times.aggregate_ms);
    println!("combine    {:>10.3}", kernel.stage_times.combine_ms);
    println!("readout    {:>10.3}", kernel.stage_times.readout_ms);
    println!("wrote {}", bin_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

fn parse_triple(spec: &str) -> Result<(f64, f64, f64), CliError> {
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    let parse = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| CliError::Usage(format!("cannot parse '{s}' as a number")))
    };
    match parts.as_slice() {
        [a, b, c] => Ok((parse(a)?, parse(b)?, parse(c)?)),
        _ => Err(CliError::Usage(format!(
            "expected three comma-separated numbers, got '{spec}'"
        ))),
    }
}

fn cmd_validate(args: ValidateArgs) -> Result<(), CliError> {
    if !SUITE_NAMES.contains(&args.suite.as_str()) {
        return Err(CliError::Usage(format!(
            "unknown suite '{}' (expected one of {:?})",
            args.suite, SUITE_NAMES
        )));
    }
    let file = load_config_file(&args.common.config)?;
    let constants = resolve_bound_constants(
        args.bound_constants
            .as_deref()
            .map(parse_triple)
            .transpose()?,
        &file,
    )
    .map_err(CliError::Usage)?;

    let seed = args.common.seed.unwrap_or(0);
    let mut opts = SuiteOptions::new(args.fast, seed, constants);
    if let Some(n) = args.n {
        opts.sketch_error_n = n;
    }
    if let Some(trials) = args.trials {
        opts.sketch_error_trials = trials;
    }
    opts.sketch_error_csv = Some(args.out.clone());

    let checks = run_suite(&args.suite, &opts)?;
    let mut failures = Vec::new();
    for check in &checks {
        println!(
            "{} {} — {}",
            if check.pass { "PASS" } else { "FAIL" },
            check.name,
            check.details
        );
        if !check.pass {
            failures.push(check.clone());
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::ChecksFailed(failures))
    }
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    let cfg = resolve_config(&args.common)?;
    let (ds, warnings) = load_dataset(&args.common, cfg.seed)?;
    if args.runs == 0 {
        return Err(CliError::Usage("--runs must be at least 1".into()));
    }

    let backends = [Backend::NaiveKron, Backend::Decoupled, Backend::Sketched];
    let (rows, bench_warnings) = bench_backends(&ds, &cfg, &backends, args.runs)?;

    let mut csv = String::from(BenchRow::csv_header());
    csv.push('\n');
    for row in &rows {
        csv.push_str(&row.to_csv_line());
        csv.push('\n');
    }
    std::fs::write(&args.out, csv)
        .map_err(|e| CliError::Compute(format!("{}: {e}", args.out.display())))?;

    for w in warnings.iter().chain(&bench_warnings) {
        eprintln!("warning: {w}");
    }
    println!("{}", BenchRow::csv_header());
    for row in &rows {
        println!("{}", row.to_csv_line());
    }
    let find = |b: Backend| rows.iter().find(|r| r.backend == b);
    if let (Some(naive), Some(dec)) = (find(Backend::NaiveKron), find(Backend::Decoupled)) {
        println!(
            "speedup decoupled/naive (total): {:.2}x",
            naive.total_ms / dec.total_ms
        );
    }
    if let (Some(dec), Some(sk)) = (find(Backend::Decoupled), find(Backend::Sketched)) {
        println!(
            "speedup sketched/decoupled (aggregate): {:.2}x",
            dec.aggregate_ms / sk.aggregate_ms
        );
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// regress
// ---------------------------------------------------------------------------

fn submatrix(values: &DenseMatrix, rows: &[usize], cols: &[usize]) -> DenseMatrix {
    DenseMatrix::from_fn(rows.len(), cols.len(), |i, j| {
        values.get(rows[i], cols[j])
    })
}

fn subvector(values: &DenseVector, idx: &[usize]) -> DenseVector {
    DenseVector::from_vec(idx.iter().map(|&i| values[i]).collect())
}

fn cmd_regress(args: RegressArgs) -> Result<(), CliError> {
    let cfg = resolve_config(&args.common)?;
    let (ds, _warnings) = load_dataset(&args.common, cfg.seed)?;
    if !(args.split > 0.0 && args.split <= 1.0) {
        return Err(CliError::Usage(format!(
            "--split must be in (0, 1], got {}",
            args.split
        )));
    }
    if args.diagnostics.is_some()
        && !(cfg.levels == 1 && cfg.fc_layers == 1 && cfg.scaling == Scaling::Normalized)
    {
        return Err(CliError::Usage(
            "--diagnostics requires --L 1 --R 1 --scaling normalized".into(),
        ));
    }

    let kernel = match &args.kernel {
        Some(path) => {
            let file = std::fs::File::open(path)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let loaded = KernelMatrix::read_binary(file)?;
            if loaded.values.rows() != ds.len() {
                return Err(CliError::Usage(format!(
                    "kernel is {}x{} but the dataset has {} graphs",
                    loaded.values.rows(),
                    loaded.values.cols(),
                    ds.len()
                )));
            }
            loaded
        }
        None => build_kernel(&ds, &cfg)?,
    };

    // Deterministic shuffled split.
    let n = ds.len();
    let mut order: Vec<usize> = (0..n).collect();
    {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0051);
        order.shuffle(&mut rng);
    }
    let n_train = ((args.split * n as f64).ceil() as usize).clamp(1, n);
    let (train_idx, test_idx) = order.split_at(n_train);
    let k_train = submatrix(&kernel.values, train_idx, train_idx);

    match args.labels.as_str() {
        "synthetic" => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x1ab));
            let model = LabelModel::random(&mut rng, ds.feature_dim, args.synthetic_t);
            let y = synthesize_labels(&ds, &model)?;
            let y_train = subvector(&y, train_idx);

            let pred_train =
                krr_fit_predict(&k_train, &y_train, &submatrix(&kernel.values, train_idx, train_idx), args.lambda)?;
            println!("train MSE: {:.6e}", mse(&pred_train, &y_train));
            if !test_idx.is_empty() {
                let pred_test = krr_fit_predict(
                    &k_train,
                    &y_train,
                    &submatrix(&kernel.values, test_idx, train_idx),
                    args.lambda,
                )?;
                println!("test MSE: {:.6e}", mse(&pred_test, &subvector(&y, test_idx)));
            }
            if let Some(path) = &args.diagnostics {
                let diag = gen_diagnostics(&kernel, &y, &model, &ds, 0.05)?;
                std::fs::write(path, serde_json::to_string_pretty(&diag).unwrap())
                    .map_err(|e| CliError::Compute(format!("{}: {e}", path.display())))?;
                println!("wrote diagnostics to {}", path.display());
            }
        }
        "real" => {
            let labels: Option<Vec<i64>> = ds.graphs.iter().map(|g| g.label()).collect();
            let labels = labels.ok_or_else(|| {
                CliError::Usage("dataset has no graph labels; --labels real needs them".into())
            })?;
            let mut classes: Vec<i64> = labels.clone();
            classes.sort_unstable();
            classes.dedup();

            // One-vs-rest regression on +-1 targets, argmax prediction.
            let eval_idx: &[usize] = if test_idx.is_empty() { train_idx } else { test_idx };
            let k_cross = submatrix(&kernel.values, eval_idx, train_idx);
            let mut scores = vec![vec![0.0f64; classes.len()]; eval_idx.len()];
            for (c_pos, class) in classes.iter().enumerate() {
                let targets = DenseVector::from_vec(
                    train_idx
                        .iter()
                        .map(|&i| if labels[i] == *class { 1.0 } else { -1.0 })
                        .collect(),
                );
                let pred = krr_fit_predict(&k_train, &targets, &k_cross, args.lambda)?;
                for (row, value) in pred.as_slice().iter().enumerate() {
                    scores[row][c_pos] = *value;
                }
            }
            let correct = eval_idx
                .iter()
                .enumerate()
                .filter(|(row, &i)| {
                    let best = scores[*row]
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.total_cmp(b.1))
                        .map(|(c, _)| classes[c])
                        .unwrap();
                    best == labels[i]
                })
                .count();
            println!(
                "{} accuracy: {:.4} ({}/{} graphs)",
                if test_idx.is_empty() { "train" } else { "test" },
                correct as f64 / eval_idx.len() as f64,
                correct,
                eval_idx.len()
            );
        }
        other => {
            return Err(CliError::Usage(format!(
                "--labels must be 'real' or 'synthetic', got '{other}'"
            )));
        }
    }
    Ok(())
}
