//! Command-line front end: single recourse generation, relevance-function
//! inspection, and batch experiments.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error. Outputs embed
//! the effective configuration and seed, so re-running a printed config
//! reproduces the output byte for byte.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use raar_core::bayesopt::BoConfig;
use raar_core::engine::{generate_recourse, RecourseRequest, RecourseResult, RelevanceSource};
use raar_core::harness::{run_experiment, synthetic_train_targets, ExperimentPlan, HarnessError};
use raar_core::objectives::Mode;
use raar_core::predictor::{
    fit_knn, load_dataset, AnalyticFn, ExternalPredictor, PredictorHandle,
};
use raar_core::relevance::{
    auto_relevance, build_relevance, load_control_points, Extreme, RelevanceSpec,
};

#[derive(Parser)]
#[command(
    name = "raar",
    version,
    about = "Counterfactual recourse for regression models via Bayesian optimization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one counterfactual recourse and print it as JSON.
    Recourse(RecourseArgs),
    /// Build a relevance function and print a sampled y,phi curve as CSV.
    Relevance(RelevanceArgs),
    /// Run a batch experiment plan and write its report files.
    Batch(BatchArgs),
}

#[derive(Args)]
struct RecourseArgs {
    /// JSON config file; explicit flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV dataset (fits the model given by --model).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Target column of --data.
    #[arg(long)]
    target_col: Option<String>,
    /// 0-based row of --data to generate recourse for.
    #[arg(long)]
    row: Option<usize>,
    /// Built-in analytic predictor (quad1d, identity, additive, interaction).
    #[arg(long)]
    analytic: Option<String>,
    /// Optimization mode: max-y, max-rel, target-y, target-rel.
    #[arg(long)]
    mode: Option<String>,
    /// Target change in percent (target modes).
    #[arg(long)]
    target_pct: Option<f64>,
    /// Search radius in percent (defaults: 5 for max modes, 100 for target modes).
    #[arg(long)]
    bounds_pct: Option<f64>,
    /// Optimizer iterations after the initial design.
    #[arg(long)]
    iters: Option<usize>,
    /// Initial design size.
    #[arg(long)]
    n_init: Option<usize>,
    /// UCB exploration weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// Acquisition candidate samples per iteration.
    #[arg(long)]
    candidates: Option<usize>,
    /// RNG seed (default: config file, then RAAR_SEED, then 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Model over --data: `knn:<k>` or `external:<command>`.
    #[arg(long)]
    model: Option<String>,
    /// Also write the JSON result to this path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Instance for analytic predictors, comma-separated (default: box midpoint).
    #[arg(long)]
    instance: Option<String>,
    /// Relevance control points CSV (header y,rel[,deriv]); overrides the
    /// mode's default relevance construction.
    #[arg(long)]
    control_points: Option<PathBuf>,
    /// Immutable features, comma-separated column names or indices.
    #[arg(long)]
    immutable: Option<String>,
}

/// File-config counterpart of the recourse flags.
#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct RecourseFileConfig {
    data: Option<PathBuf>,
    target_col: Option<String>,
    row: Option<usize>,
    analytic: Option<String>,
    mode: Option<String>,
    target_pct: Option<f64>,
    bounds_pct: Option<f64>,
    iters: Option<usize>,
    n_init: Option<usize>,
    lambda: Option<f64>,
    candidates: Option<usize>,
    seed: Option<u64>,
    model: Option<String>,
    instance: Option<Vec<f64>>,
    control_points: Option<PathBuf>,
    immutable: Option<Vec<serde_json::Value>>,
}

#[derive(Args)]
struct RelevanceArgs {
    /// CSV dataset supplying training targets for --auto.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Target column of --data.
    #[arg(long)]
    target_col: Option<String>,
    /// Automatic construction from the target distribution: right | both.
    #[arg(long)]
    auto: Option<String>,
    /// Relevance control points CSV (header y,rel[,deriv]).
    #[arg(long)]
    control_points: Option<PathBuf>,
    /// Number of sample points across the relevance domain.
    #[arg(long, default_value_t = 101)]
    grid: usize,
    /// Also write the CSV curve to this path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BatchArgs {
    /// Experiment plan JSON.
    #[arg(long, conflicts_with = "builtin_synthetic")]
    config: Option<PathBuf>,
    /// Run the built-in synthetic suite instead of a plan file.
    #[arg(long)]
    builtin_synthetic: bool,
    /// Directory for report.json, runs.csv, and the box-plot files.
    #[arg(long)]
    out_dir: PathBuf,
    /// Concurrent runs.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Override the plan's base seed.
    #[arg(long)]
    seed: Option<u64>,
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Recourse(args) => cmd_recourse(args),
        Command::Relevance(args) => cmd_relevance(args),
        Command::Batch(args) => cmd_batch(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn env_seed() -> Option<u64> {
    std::env::var("RAAR_SEED").ok().and_then(|s| s.parse().ok())
}

fn parse_csv_floats(text: &str) -> CliResult<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("`{t}` is not a number")))
        })
        .collect()
}

fn cmd_recourse(args: RecourseArgs) -> CliResult<()> {
    let file: RecourseFileConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => RecourseFileConfig::default(),
    };

    // Explicit flags win over config-file values.
    let data = args.data.or(file.data);
    let analytic = args.analytic.or(file.analytic);
    let target_col = args.target_col.or(file.target_col);
    let row = args.row.or(file.row);
    let model = args.model.or(file.model);
    let control_points = args.control_points.or(file.control_points);
    let instance = match args.instance {
        Some(text) => Some(parse_csv_floats(&text)?),
        None => file.instance,
    };
    let mode_str = args
        .mode
        .or(file.mode)
        .ok_or_else(|| CliError::Usage("--mode is required".into()))?;
    let mode = Mode::from_str(&mode_str).map_err(CliError::Usage)?;
    let target_pct = args.target_pct.or(file.target_pct);
    if mode.is_target() && target_pct.is_none() {
        return Err(CliError::Usage(format!(
            "mode {mode} requires --target-pct"
        )));
    }
    let seed = args.seed.or(file.seed).or_else(env_seed).unwrap_or(0);
    let bo = BoConfig {
        n_init: args.n_init.or(file.n_init).unwrap_or(8),
        n_iter: args.iters.or(file.iters).unwrap_or(50),
        lambda: args.lambda.or(file.lambda).unwrap_or(1.5),
        n_candidates: args.candidates.or(file.candidates).unwrap_or(512),
        seed,
    };

    // Resolve the predictor and its context.
    let (predictor, x_orig, ranges, feature_names, train_targets) = match (&data, &analytic) {
        (Some(_), Some(_)) | (None, None) => {
            return Err(CliError::Usage(
                "exactly one of --data or --analytic is required".into(),
            ))
        }
        (Some(path), None) => {
            let target_col = target_col
                .ok_or_else(|| CliError::Usage("--data requires --target-col".into()))?;
            let dataset = load_dataset(path, &target_col).map_err(CliError::runtime)?;
            let row = row.ok_or_else(|| CliError::Usage("--data requires --row".into()))?;
            if row >= dataset.n_rows() {
                return Err(CliError::Runtime(format!(
                    "RowOutOfRange: row {row} outside the {}-row dataset",
                    dataset.n_rows()
                )));
            }
            let x_orig = dataset.features[row].clone();
            let model = model.as_deref().unwrap_or("knn:5");
            let predictor = if let Some(k) = model.strip_prefix("knn:") {
                let k: usize = k
                    .parse()
                    .map_err(|_| CliError::Usage(format!("bad k in `{model}`")))?;
                fit_knn(&dataset, k).map_err(CliError::runtime)?
            } else if let Some(cmd) = model.strip_prefix("external:") {
                PredictorHandle::External(
                    ExternalPredictor::spawn(cmd, dataset.n_features())
                        .map_err(CliError::runtime)?,
                )
            } else {
                return Err(CliError::Usage(format!(
                    "unknown model `{model}`; expected knn:<k> or external:<command>"
                )));
            };
            (
                predictor,
                x_orig,
                dataset.ranges.clone(),
                dataset.feature_names.clone(),
                dataset.target.clone(),
            )
        }
        (None, Some(name)) => {
            if model.is_some() {
                return Err(CliError::Usage("--model only applies to --data".into()));
            }
            let f = AnalyticFn::from_name(name).map_err(|e| CliError::Usage(e.to_string()))?;
            let ranges = f.ranges();
            let x_orig = match instance {
                Some(x) => x,
                None => ranges.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect(),
            };
            let names = (0..f.dim()).map(|i| format!("x{i}")).collect();
            let targets = synthetic_train_targets(f, seed);
            (PredictorHandle::Analytic(f), x_orig, ranges, names, targets)
        }
    };

    let mutable = resolve_mutable(
        args.immutable,
        file.immutable,
        &feature_names,
        x_orig.len(),
    )?;

    let relevance = match control_points {
        Some(path) => {
            RelevanceSource::Points(load_control_points(&path).map_err(CliError::runtime)?)
        }
        None => match mode {
            Mode::MaxRel => RelevanceSource::Auto {
                targets: train_targets,
                extreme: Extreme::Right,
            },
            Mode::TargetRel => {
                let (lo, hi) = target_extent(&train_targets);
                RelevanceSource::TargetLocal { y_min: lo, y_max: hi }
            }
            Mode::MaxY | Mode::TargetY => RelevanceSource::None,
        },
    };

    let request = RecourseRequest {
        x_orig,
        ranges,
        mutable,
        mode,
        target_pct,
        bounds_pct: args.bounds_pct.or(file.bounds_pct),
        bo,
        relevance,
    };
    let result: RecourseResult =
        generate_recourse(&predictor, &request).map_err(CliError::runtime)?;
    let mut json = serde_json::to_string_pretty(&result).map_err(CliError::runtime)?;
    json.push('\n');
    if let Some(out) = &args.out {
        std::fs::write(out, &json)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    }
    print!("{json}");
    Ok(())
}

fn target_extent(targets: &[f64]) -> (f64, f64) {
    targets
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(*v), hi.max(*v))
        })
}

/// Combine the `--immutable` flag (names or indices, comma separated) with
/// the config file's list into per-feature mutability flags.
fn resolve_mutable(
    flag: Option<String>,
    file: Option<Vec<serde_json::Value>>,
    feature_names: &[String],
    dim: usize,
) -> CliResult<Vec<bool>> {
    let mut mutable = vec![true; dim];
    let entries: Vec<String> = match (flag, file) {
        (Some(text), _) => text.split(',').map(|t| t.trim().to_string()).collect(),
        (None, Some(values)) => values
            .iter()
            .map(|v| match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .collect(),
        (None, None) => Vec::new(),
    };
    for entry in entries {
        if entry.is_empty() {
            continue;
        }
        let idx = if let Ok(i) = entry.parse::<usize>() {
            i
        } else if let Some(i) = feature_names.iter().position(|n| *n == entry) {
            i
        } else {
            return Err(CliError::Usage(format!(
                "unknown immutable feature `{entry}`"
            )));
        };
        if idx >= dim {
            return Err(CliError::Usage(format!(
                "immutable feature index {idx} out of range for {dim} features"
            )));
        }
        mutable[idx] = false;
    }
    Ok(mutable)
}

fn cmd_relevance(args: RelevanceArgs) -> CliResult<()> {
    if args.grid < 2 {
        return Err(CliError::Usage("--grid must be at least 2".into()));
    }
    let spec: RelevanceSpec = match (&args.control_points, &args.data) {
        (Some(path), None) => {
            let points = load_control_points(path).map_err(CliError::runtime)?;
            build_relevance(points).map_err(CliError::runtime)?
        }
        (None, Some(path)) => {
            let target_col = args
                .target_col
                .as_deref()
                .ok_or_else(|| CliError::Usage("--data requires --target-col".into()))?;
            let extreme = match args.auto.as_deref() {
                Some("right") => Extreme::Right,
                Some("both") => Extreme::Both,
                Some(other) => {
                    return Err(CliError::Usage(format!(
                        "unknown --auto `{other}`; expected right or both"
                    )))
                }
                None => return Err(CliError::Usage("--data requires --auto right|both".into())),
            };
            let dataset = load_dataset(path, target_col).map_err(CliError::runtime)?;
            auto_relevance(&dataset.target, extreme).map_err(CliError::runtime)?
        }
        _ => {
            return Err(CliError::Usage(
                "exactly one of --control-points or --data is required".into(),
            ))
        }
    };

    let (y_min, y_max) = spec.domain();
    let mut csv = String::from("y,phi\n");
    for i in 0..args.grid {
        let t = i as f64 / (args.grid - 1) as f64;
        let y = y_min * (1.0 - t) + y_max * t;
        let phi = spec.eval(y).map_err(CliError::runtime)?;
        csv.push_str(&format!("{y},{phi}\n"));
    }
    if let Some(out) = &args.out {
        std::fs::write(out, &csv)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    }
    print!("{csv}");
    Ok(())
}

fn cmd_batch(args: BatchArgs) -> CliResult<()> {
    let mut plan: ExperimentPlan = match (&args.config, args.builtin_synthetic) {
        (Some(path), false) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        (None, true) => {
            let mut plan = ExperimentPlan::builtin_synthetic();
            if let Some(seed) = env_seed() {
                plan.seed = seed;
            }
            plan
        }
        _ => {
            return Err(CliError::Usage(
                "exactly one of --config or --builtin-synthetic is required".into(),
            ))
        }
    };
    if let Some(seed) = args.seed {
        plan.seed = seed;
    }

    ensure_writable(&args.out_dir)?;
    match run_experiment(&plan, Some(&args.out_dir), args.workers) {
        Ok(report) => {
            let failed = report.runs.iter().filter(|r| r.error.is_some()).count();
            println!(
                "wrote {} ({} runs, {} failed)",
                args.out_dir.join("report.json").display(),
                report.runs.len(),
                failed
            );
            Ok(())
        }
        Err(e @ HarnessError::ExperimentDegraded { .. }) => Err(CliError::runtime(e)),
        Err(e) => Err(CliError::runtime(e)),
    }
}

/// Fail before any run starts when the output directory is unusable.
fn ensure_writable(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    let probe = dir.join(".write-probe");
    std::fs::write(&probe, b"")
        .map_err(|e| CliError::Runtime(format!("{} is not writable: {e}", dir.display())))?;
    let _ = std::fs::remove_file(&probe);
    Ok(())
}
