//! `smoothcert` — train noise-robust classifiers and certify them.
//!
//! Subcommands cover the full loop: `train` fits a model by maximizing the
//! certified radius, `certify` stamps per-example robustness certificates,
//! `eval` turns certificate CSVs into accuracy tables, `sweep` repeats
//! train+certify over a hyperparameter list, and `compare-rs` runs the
//! hard (vote counting) and soft (expected likelihood) certifiers side by
//! side on shared noise.
//!
//! Every run is a pure function of the config (file + flags) and the input
//! files. Exit codes: 0 success, 1 validation problem, 2 I/O problem.

mod config;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use config::{
    parse_list, resolve_dataset, validation, CliError, CliResult, DatasetArgs, FileConfig,
    Resolver, DATASET_KEYS,
};
use smoothcert::data::Dataset;
use smoothcert::eval::{
    average_certified_radius, build_report, certified_accuracy, compare_soft_hard, curve_to_csv,
    default_grid, rows_from_csv, rows_to_csv, ComparisonReport,
};
use smoothcert::macer::{train, EpochLog, MacerConfig, Schedule};
use smoothcert::net::SmallNet;
use smoothcert::smoothing::{BoundKind, CertifyConfig};
use smoothcert::statmath::ConfidenceLevel;

#[derive(Parser)]
#[command(name = "smoothcert", version, about = "Certified-radius training and certification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model with the certified-radius objective.
    Train(TrainArgs),
    /// Certify a trained model on a dataset, writing per-example rows.
    Certify(CertifyArgs),
    /// Summarize a certification CSV into an accuracy table and curve.
    Eval(EvalArgs),
    /// Train and certify once per value of a swept hyperparameter.
    Sweep(SweepArgs),
    /// Certify with all three bounds on shared noise and compare.
    CompareRs(CompareArgs),
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are successful outcomes; anything else is a
            // validation failure (exit 1, not clap's default 2)
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::Train(args) => cmd_train(&args).map(|_| ()),
        Command::Certify(args) => cmd_certify(&args).map(|_| ()),
        Command::Eval(args) => cmd_eval(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::CompareRs(args) => cmd_compare(&args),
    };
    if let Err(e) = result {
        eprintln!("error: {}", e.message());
        std::process::exit(e.exit_code());
    }
}

fn load_file_config(path: &Option<PathBuf>) -> CliResult<FileConfig> {
    match path {
        Some(p) => FileConfig::load(p),
        None => Ok(FileConfig::empty()),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Args)]
struct TrainArgs {
    /// Config file with a [train] section.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    params: TrainParams,
}

/// Train settings proper, shared verbatim by `sweep` (which adds its own
/// `--config` and certify knobs, so the file flag lives one level up).
#[derive(Args)]
struct TrainParams {
    #[command(flatten)]
    data: DatasetArgs,
    /// Noise level of the smoothing distribution.
    #[arg(long)]
    sigma: Option<f64>,
    /// Gaussian samples per input and step.
    #[arg(long)]
    k: Option<usize>,
    /// Robustness weight, constant or schedule like '0:0,10:12'.
    #[arg(long)]
    lambda: Option<Schedule>,
    /// Hinge width in quantile-gap space.
    #[arg(long)]
    gamma: Option<f64>,
    /// Inverse softmax temperature.
    #[arg(long)]
    beta: Option<f64>,
    /// Learning rate, constant or schedule like '0:0.01,30:0.001'.
    #[arg(long)]
    lr: Option<Schedule>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Comma-separated hidden layer widths, e.g. '64' or '64,32'.
    #[arg(long)]
    hidden_dims: Option<String>,
    /// Apply beta to the cross-entropy term too (true) or only to the
    /// robustness term (false).
    #[arg(long)]
    beta_on_classification: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    /// Where to write the trained checkpoint.
    #[arg(long)]
    checkpoint_out: Option<PathBuf>,
    /// Where to write the per-epoch training log CSV.
    #[arg(long)]
    log_out: Option<PathBuf>,
}

const TRAIN_KEYS: &[&str] = &[
    "sigma",
    "k",
    "lambda",
    "gamma",
    "beta",
    "lr",
    "momentum",
    "epochs",
    "batch_size",
    "hidden_dims",
    "beta_on_classification",
    "seed",
    "checkpoint_out",
    "log_out",
];

/// Assembles the trainer config and dataset for `train` (also reused per
/// sweep point).
fn resolve_train(
    args: &TrainParams,
    file: &FileConfig,
) -> CliResult<(Dataset, MacerConfig, PathBuf, PathBuf)> {
    let known: Vec<&str> = TRAIN_KEYS.iter().chain(DATASET_KEYS).copied().collect();
    file.check_known_keys("train", &known)?;
    let r = Resolver::new(file, "train");
    let dataset = resolve_dataset(&args.data, &r)?;
    let seed = r.get(args.seed, "seed", 0)?;
    let sigma = r.get(args.sigma, "sigma", 0.25)?;
    let mut cfg = MacerConfig::defaults(sigma, seed);
    cfg.k = r.get(args.k, "k", cfg.k)?;
    cfg.lambda = r.get(args.lambda.clone(), "lambda", cfg.lambda)?;
    cfg.gamma = r.get(args.gamma, "gamma", cfg.gamma)?;
    cfg.beta = r.get(args.beta, "beta", cfg.beta)?;
    cfg.lr = r.get(args.lr.clone(), "lr", cfg.lr)?;
    cfg.momentum = r.get(args.momentum, "momentum", cfg.momentum)?;
    cfg.epochs = r.get(args.epochs, "epochs", cfg.epochs)?;
    cfg.batch_size = r.get(args.batch_size, "batch_size", cfg.batch_size)?;
    cfg.beta_on_classification = r.get(
        args.beta_on_classification,
        "beta_on_classification",
        cfg.beta_on_classification,
    )?;
    if let Some(raw) = r.get_opt(args.hidden_dims.clone(), "hidden_dims")? {
        cfg.hidden_dims = parse_list(&raw, "hidden_dims")?;
    }
    cfg.validate()?;
    let checkpoint = r.get(
        args.checkpoint_out.clone(),
        "checkpoint_out",
        PathBuf::from("model.smnet"),
    )?;
    let log = r.get(args.log_out.clone(), "log_out", PathBuf::from("train_log.csv"))?;
    Ok((dataset, cfg, checkpoint, log))
}

fn cmd_train(args: &TrainArgs) -> CliResult<SmallNet> {
    let file = load_file_config(&args.config)?;
    let (dataset, cfg, checkpoint_path, log_path) = resolve_train(&args.params, &file)?;
    let (net, logs) = train(&dataset, &cfg)?;
    net.save(&checkpoint_path)?;

    let mut csv = String::from(EpochLog::CSV_HEADER);
    csv.push('\n');
    for log in &logs {
        csv.push_str(&log.csv_row());
        csv.push('\n');
    }
    write_file(&log_path, csv.as_bytes())?;

    match logs.last() {
        Some(last) => println!(
            "trained {} epochs on {} ({} examples): total {:.6}, ce {:.6}, hinge {:.6}, frac_in_G {:.4}",
            logs.len(),
            dataset.name(),
            dataset.len(),
            last.mean_total,
            last.mean_ce,
            last.mean_hinge,
            last.frac_in_correct_set,
        ),
        None => println!(
            "trained 0 epochs on {} ({} examples): checkpoint is the initialization",
            dataset.name(),
            dataset.len()
        ),
    }
    println!("checkpoint: {}", checkpoint_path.display());
    println!("log: {}", log_path.display());
    Ok(net)
}

// ---------------------------------------------------------------------------
// certify
// ---------------------------------------------------------------------------

#[derive(Args)]
struct CertifyArgs {
    /// Config file with a [certify] section.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DatasetArgs,
    /// Trained checkpoint to certify.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Stage-1 (class selection) sample count.
    #[arg(long)]
    n0: Option<usize>,
    /// Stage-2 (bound estimation) sample count.
    #[arg(long)]
    n: Option<usize>,
    /// Failure probability of the one-sided bound.
    #[arg(long)]
    alpha: Option<f64>,
    /// Bound: clopper_pearson, hoeffding or bernstein.
    #[arg(long)]
    bound: Option<BoundKind>,
    /// Inverse softmax temperature of the soft certifier.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Where to write the per-example rows CSV.
    #[arg(long)]
    rows_out: Option<PathBuf>,
}

const CERTIFY_KEYS: &[&str] = &[
    "checkpoint",
    "sigma",
    "n0",
    "n",
    "alpha",
    "bound",
    "beta",
    "seed",
    "rows_out",
];

fn resolve_certify(
    args: &CertifyArgs,
    file: &FileConfig,
) -> CliResult<(Dataset, PathBuf, CertifyConfig, u64, PathBuf)> {
    let known: Vec<&str> = CERTIFY_KEYS.iter().chain(DATASET_KEYS).copied().collect();
    file.check_known_keys("certify", &known)?;
    let r = Resolver::new(file, "certify");
    let dataset = resolve_dataset(&args.data, &r)?;
    let checkpoint = r.get(
        args.checkpoint.clone(),
        "checkpoint",
        PathBuf::from("model.smnet"),
    )?;
    let sigma = r.get(args.sigma, "sigma", 0.25)?;
    let n0 = r.get(args.n0, "n0", 100)?;
    let n = r.get(args.n, "n", 10_000)?;
    let alpha = ConfidenceLevel::new(r.get(args.alpha, "alpha", 0.001)?)?;
    let bound = r.get(args.bound, "bound", BoundKind::ClopperPearson)?;
    let beta = r.get(args.beta, "beta", 16.0)?;
    let cfg = CertifyConfig::new(sigma, n0, n, alpha, bound, beta)?;
    let seed = r.get(args.seed, "seed", 0)?;
    let rows_out = r.get(args.rows_out.clone(), "rows_out", PathBuf::from("rows.csv"))?;
    Ok((dataset, checkpoint, cfg, seed, rows_out))
}

fn cmd_certify(args: &CertifyArgs) -> CliResult<PathBuf> {
    let file = load_file_config(&args.config)?;
    let (dataset, checkpoint, cfg, seed, rows_out) = resolve_certify(args, &file)?;
    let net = SmallNet::load(&checkpoint)?;
    if net.input_dim() != dataset.num_features() {
        return Err(validation(format!(
            "checkpoint expects {} input features but the dataset has {}",
            net.input_dim(),
            dataset.num_features()
        )));
    }
    let rows = smoothcert::eval::certify_dataset(&net, &dataset, &cfg, seed)?;
    write_file(&rows_out, rows_to_csv(&rows).as_bytes())?;
    println!(
        "certified {} examples with {}: clean accuracy {:.4}, acr {:.6}",
        rows.len(),
        cfg.bound_kind.name(),
        certified_accuracy(&rows, 0.0)?,
        average_certified_radius(&rows)?
    );
    println!("rows: {}", rows_out.display());
    Ok(rows_out)
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Args)]
struct EvalArgs {
    /// Config file with an [eval] section.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Per-example rows CSV produced by `certify`.
    #[arg(long)]
    rows: Option<PathBuf>,
    /// Comma-separated radius grid; default 0.00..2.25 step 0.25.
    #[arg(long)]
    grid: Option<String>,
    /// Optional path for the radius-accuracy curve CSV.
    #[arg(long)]
    curve_out: Option<PathBuf>,
}

const EVAL_KEYS: &[&str] = &["rows", "grid", "curve_out"];

fn cmd_eval(args: &EvalArgs) -> CliResult<()> {
    let file = load_file_config(&args.config)?;
    file.check_known_keys("eval", EVAL_KEYS)?;
    let r = Resolver::new(&file, "eval");
    let rows_path = r.get(args.rows.clone(), "rows", PathBuf::from("rows.csv"))?;
    let grid = match r.get_opt(args.grid.clone(), "grid")? {
        Some(raw) => parse_list(&raw, "grid")?,
        None => default_grid(),
    };
    let text = std::fs::read_to_string(&rows_path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", rows_path.display())))?;
    let rows = rows_from_csv(&text)?;
    let report = build_report(rows, &grid)?;

    print!("{}", format_eval_table(&report.curve, report.acr));
    if let Some(curve_out) = r.get_opt(args.curve_out.clone(), "curve_out")? {
        write_file(&curve_out, curve_to_csv(&report.curve).as_bytes())?;
        println!("curve: {}", curve_out.display());
    }
    Ok(())
}

/// The table layout mirrors the usual presentation: one column per radius,
/// ACR at the end.
fn format_eval_table(curve: &[(f64, f64)], acr: f64) -> String {
    let mut header = String::from("radius ");
    let mut values = String::from("acc    ");
    for (radius, accuracy) in curve {
        header.push_str(&format!(" {radius:>6.2}"));
        values.push_str(&format!(" {accuracy:>6.3}"));
    }
    header.push_str("     ACR");
    values.push_str(&format!("  {acr:.4}"));
    format!("{header}\n{values}\n")
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

#[derive(Args)]
struct SweepArgs {
    /// Config file with [train] and [certify] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Hyperparameter to sweep: k, lambda, gamma or beta.
    #[arg(long)]
    param: String,
    /// Comma-separated values to sweep over.
    #[arg(long)]
    values: String,
    /// Where to write the aggregated CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    train: TrainParams,
    #[command(flatten)]
    certify_args: CertifyNested,
}

/// Certify flags for sweep, renamed to avoid clashing with train flags.
#[derive(Args)]
struct CertifyNested {
    /// Stage-1 sample count for the per-value certification.
    #[arg(long)]
    n0: Option<usize>,
    /// Stage-2 sample count for the per-value certification.
    #[arg(long)]
    n: Option<usize>,
    /// Failure probability for the per-value certification.
    #[arg(long)]
    alpha: Option<f64>,
    /// Bound for the per-value certification.
    #[arg(long)]
    bound: Option<BoundKind>,
}

fn cmd_sweep(args: &SweepArgs) -> CliResult<()> {
    let file = load_file_config(&args.config)?;
    let values: Vec<f64> = parse_list(&args.values, "values")?;
    let grid = default_grid();

    let out_path = args.out.clone().unwrap_or_else(|| PathBuf::from("sweep.csv"));
    let mut csv = String::from("param_value,acr");
    for g in &grid {
        csv.push_str(&format!(",acc@{g:.2}"));
    }
    csv.push('\n');

    let mut summary: Vec<(f64, f64, Vec<(f64, f64)>)> = Vec::new();
    for &value in &values {
        let (dataset, mut cfg, _, _) = resolve_train(&args.train, &file)?;
        apply_sweep_value(&mut cfg, &args.param, value)?;
        cfg.validate()?;
        let (net, _) = train(&dataset, &cfg)?;

        // certification shares the [certify] section across runs; the seed
        // and noise are identical so runs differ only through the trained
        // net
        file.check_known_keys(
            "certify",
            &CERTIFY_KEYS.iter().chain(DATASET_KEYS).copied().collect::<Vec<_>>(),
        )?;
        let r = Resolver::new(&file, "certify");
        let test_data = resolve_dataset(&args.train.data, &r)?;
        let sigma = cfg.sigma;
        let n0 = r.get(args.certify_args.n0, "n0", 100)?;
        let n = r.get(args.certify_args.n, "n", 1000)?;
        let alpha = ConfidenceLevel::new(r.get(args.certify_args.alpha, "alpha", 0.001)?)?;
        let bound = r.get(args.certify_args.bound, "bound", BoundKind::ClopperPearson)?;
        let beta = cfg.beta;
        let ccfg = CertifyConfig::new(sigma, n0, n, alpha, bound, beta)?;
        let seed = r.get(None, "seed", 0)?;
        let rows = smoothcert::eval::certify_dataset(&net, &test_data, &ccfg, seed)?;
        let report = build_report(rows, &grid)?;

        csv.push_str(&format!("{value},{:.6}", report.acr));
        for (_, acc) in &report.curve {
            csv.push_str(&format!(",{acc:.6}"));
        }
        csv.push('\n');
        println!("{} = {value}: acr {:.6}", args.param, report.acr);
        summary.push((value, report.acr, report.curve));
    }
    write_file(&out_path, csv.as_bytes())?;
    println!("sweep: {}", out_path.display());

    // soft trade-off note for lambda sweeps: more robustness weight is
    // expected to cost clean accuracy while buying accuracy at large radii
    if args.param == "lambda" && summary.len() >= 2 {
        let first = &summary[0];
        let last = &summary[summary.len() - 1];
        let clean_drop = last.2[0].1 <= first.2[0].1;
        let far_gain = last.2.last().unwrap().1 >= first.2.last().unwrap().1;
        if !(clean_drop && far_gain) {
            eprintln!(
                "note: lambda sweep did not show the usual clean-vs-robust trade-off \
                 (clean {:.3} -> {:.3}, far {:.3} -> {:.3})",
                first.2[0].1,
                last.2[0].1,
                first.2.last().unwrap().1,
                last.2.last().unwrap().1
            );
        }
    }
    Ok(())
}

fn apply_sweep_value(cfg: &mut MacerConfig, param: &str, value: f64) -> CliResult<()> {
    match param {
        "k" => {
            if value.fract() != 0.0 || value < 1.0 {
                return Err(validation(format!("k value {value} is not a positive integer")));
            }
            cfg.k = value as usize;
        }
        "lambda" => cfg.lambda = Schedule::constant(value)?,
        "gamma" => cfg.gamma = value,
        "beta" => cfg.beta = value,
        other => {
            return Err(validation(format!(
                "invalid param '{other}' (expected k, lambda, gamma or beta)"
            )))
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// compare-rs
// ---------------------------------------------------------------------------

#[derive(Args)]
struct CompareArgs {
    /// Config file with a [certify] section.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DatasetArgs,
    /// Trained checkpoint to certify.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    n0: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Where to write the side-by-side radii CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_compare(args: &CompareArgs) -> CliResult<()> {
    let file = load_file_config(&args.config)?;
    let certify_args = CertifyArgs {
        config: None,
        data: args.data.clone(),
        checkpoint: args.checkpoint.clone(),
        sigma: args.sigma,
        n0: args.n0,
        n: args.n,
        alpha: args.alpha,
        bound: None,
        beta: args.beta,
        seed: args.seed,
        rows_out: None,
    };
    let (dataset, checkpoint, cfg, seed, _) = resolve_certify(&certify_args, &file)?;
    let net = SmallNet::load(&checkpoint)?;
    let report = compare_soft_hard(&net, &dataset, &cfg, seed)?;

    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("compare_rs.csv"));
    write_file(&out, smoothcert::eval::comparison_to_csv(&report).as_bytes())?;
    print!("{}", format_compare_summary(&report));
    println!("comparison: {}", out.display());
    Ok(())
}

fn format_compare_summary(report: &ComparisonReport) -> String {
    let mut out = format!(
        "mutually certified: {} example(s)\n",
        report.num_mutually_certified
    );
    for m in report.methods() {
        let median = m
            .median_mutually_certified
            .map_or("-".to_string(), |v| format!("{v:.6}"));
        out.push_str(&format!(
            "{:<16} acr {:.6}  median radius (mutual) {median}\n",
            m.bound_kind.name(),
            m.acr
        ));
    }
    out
}
