use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use sipp_cli::gen::{gen_data, gen_model, InitDist, LayerDesc};
use sipp_cli::pipeline::{
    bound_only, evaluate, prune_run, sweep, BudgetSpec, RunConfig, RunStrategy,
};
use sipp_core::io::{read_batch, read_model, write_batch, write_model};

/// Prunes feed-forward networks by empirical sensitivity and reports
/// provable relative-error certificates next to measured errors.
#[derive(Parser)]
#[command(name = "sipp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a model bundle with random weights.
    GenModel(GenModelArgs),
    /// Generate a tensor batch file.
    GenData(GenDataArgs),
    /// Prune a model and report certificates plus empirical errors.
    Prune(PruneArgs),
    /// Run one prune per ratio, emitting CSV.
    Sweep(SweepArgs),
    /// Compute the certificate for a budget without pruning.
    Bound(PruneArgs),
    /// Measure empirical errors of an existing pruned model.
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenModelArgs {
    /// Layer spec, repeatable: dense:IN:OUT[:ACT] or
    /// conv2d:IN_C:OUT_C:KHxKW[:sN][:pN][:ACT]
    #[arg(long = "layer", required = true)]
    layers: Vec<String>,
    /// Weight distribution: uniform-nonneg or gaussian.
    #[arg(long, default_value = "uniform-nonneg")]
    init: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also draw biases (from the same distribution).
    #[arg(long)]
    with_bias: bool,
    /// Output bundle directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenDataArgs {
    /// Per-sample shape, comma separated (e.g. 16 or 1,8,8).
    #[arg(long)]
    shape: String,
    /// Distribution: uniform-nonneg or gaussian.
    #[arg(long, default_value = "uniform-nonneg")]
    dist: String,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output tensor batch file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PruneArgs {
    /// Model bundle directory.
    #[arg(long)]
    model: PathBuf,
    /// Tensor batch used for sensitivities (validation split).
    #[arg(long)]
    data: PathBuf,
    /// Tensor batch for empirical error measurement.
    #[arg(long = "test-data")]
    test_data: Option<PathBuf>,
    /// det, rand, hybrid, simple, or wt.
    #[arg(long, default_value = "det")]
    strategy: String,
    /// Total weights to keep (exclusive with --ratio).
    #[arg(long)]
    budget: Option<usize>,
    /// Fraction of prunable weights to remove (exclusive with --budget).
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Regularity constant C.
    #[arg(long = "c-const", default_value_t = 2.0)]
    c_const: f64,
    /// Regularity constant K.
    #[arg(long = "k-const", default_value_t = 1.0)]
    k_const: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the derived sensitivity sample-set size.
    #[arg(long = "sample-size")]
    sample_size: Option<usize>,
    /// Minimum weights kept per group (0 or 1).
    #[arg(long = "alloc-floor", default_value_t = 1)]
    alloc_floor: usize,
    /// Output directory (prune) or file (bound, sweep).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-group sensitivity tables as CSV.
    #[arg(long)]
    export_sensitivities: bool,
    /// Also write the allocation plan as CSV.
    #[arg(long)]
    export_plan: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    prune: PruneArgs,
    /// Comma-separated prune ratios, e.g. 0.0,0.25,0.5,0.75
    #[arg(long)]
    ratios: String,
}

#[derive(Args)]
struct EvalArgs {
    /// Reference model bundle.
    #[arg(long)]
    model: PathBuf,
    /// Pruned model bundle.
    #[arg(long)]
    pruned: PathBuf,
    #[arg(long = "test-data")]
    test_data: PathBuf,
    /// Certificate to evaluate coverage against.
    #[arg(long)]
    eps: Option<f64>,
    /// Write the stats JSON here as well as stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl PruneArgs {
    fn to_config(&self, require_budget: bool) -> Result<RunConfig> {
        let budget = if require_budget || self.budget.is_some() || self.ratio.is_some() {
            BudgetSpec::from_flags(self.budget, self.ratio)?
        } else {
            // sweep supplies its own ratios
            BudgetSpec::Ratio(0.0)
        };
        Ok(RunConfig {
            model_dir: self.model.clone(),
            data_path: self.data.clone(),
            test_data_path: self.test_data.clone(),
            strategy: RunStrategy::parse(&self.strategy)?,
            budget,
            delta: self.delta,
            c: self.c_const,
            k: self.k_const,
            seed: self.seed,
            out_dir: self.out.clone(),
            sample_size: self.sample_size,
            alloc_floor: self.alloc_floor,
            export_sensitivities: self.export_sensitivities,
            export_plan: self.export_plan,
        })
    }
}

fn parse_ratios(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .with_context(|| format!("bad ratio `{tok}`"))
        })
        .collect()
}

fn parse_shape(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<usize>()
                .with_context(|| format!("bad extent `{tok}`"))
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenModel(args) => {
            let descs = args
                .layers
                .iter()
                .map(|s| LayerDesc::parse(s))
                .collect::<Result<Vec<_>>>()?;
            let init = InitDist::parse(&args.init)?;
            let net = gen_model(&descs, init, args.seed, args.with_bias)?;
            write_model(&args.out, &net)?;
            println!("wrote model bundle to {}", args.out.display());
        }
        Command::GenData(args) => {
            let shape = parse_shape(&args.shape)?;
            let dist = InitDist::parse(&args.dist)?;
            let tensor = gen_data(&shape, dist, args.count, args.seed)?;
            write_batch(&args.out, &tensor)?;
            println!("wrote {} samples to {}", args.count, args.out.display());
        }
        Command::Prune(args) => {
            let cfg = args.to_config(true)?;
            let (report, _) = prune_run(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Sweep(args) => {
            let ratios = parse_ratios(&args.ratios)?;
            let cfg = args.prune.to_config(false)?;
            let csv = sweep(&cfg, &ratios)?;
            match &cfg.out_dir {
                Some(path) => println!("wrote sweep CSV to {}", path.display()),
                None => print!("{csv}"),
            }
        }
        Command::Bound(args) => {
            let cfg = args.to_config(true)?;
            let certificate = bound_only(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&certificate)?);
        }
        Command::Eval(args) => {
            let reference = read_model(&args.model)?;
            let pruned = read_model(&args.pruned)?;
            let test = read_batch(&args.test_data)?;
            let stats = evaluate(&reference, &pruned, &test, args.eps)?;
            let json = serde_json::to_string_pretty(&stats)?;
            if let Some(out) = &args.out {
                std::fs::write(out, &json)?;
            }
            println!("{json}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // One machine-readable line on stderr.
            eprintln!("{}", serde_json::json!({ "error": format!("{err:#}") }));
            ExitCode::FAILURE
        }
    }
}
