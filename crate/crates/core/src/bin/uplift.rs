use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use uplift::directsampling::{ds_simulate, DsParams};
use uplift::field::{load_grid_stack, save_grid_stack, Grid, StackFormat};
use uplift::lifting::{events_from_stack, extract_events, extract_top_events, lift_batch, lifted_stack, write_manifest, LiftSpec};
use uplift::marginal::{fit_per_cell, write_params_csv, ShapeEstimator};
use uplift::pipeline::{back_transform, run_pipeline, standardize, validate, PipelineConfig, ValidationReport, EVENTS_CSV_HEADER, KEYS};
use uplift::risk::{summary_series, RiskFunctional};
use uplift::synth::{simulate, CovarianceSpec, FactorMethod, Family, MarginTransform, SynthSpec};

#[derive(Parser)]
#[command(name = "uplift", version, about = "Enrich replicated gridded data with extreme events")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Field file format for inputs and outputs.
    #[arg(long, global = true, default_value = "binary")]
    format: StackFormat,
    /// Master seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit per-cell margins and write their parameters as CSV.
    FitMargins(FitArgs),
    /// Move a stack between the original and the uniform scale.
    Transform(TransformArgs),
    /// Compute summaries and extract declustered extreme events.
    ExtractEvents(ExtractArgs),
    /// Lift extracted events to new summary levels.
    Lift(LiftArgs),
    /// Direct Sampling realizations from a training stack.
    Resample(ResampleArgs),
    /// Simulate Gaussian or Student-t fields.
    Synth(SynthArgs),
    /// Compare simulated and holdout field statistics.
    Validate(ValidateArgs),
    /// Run the full pipeline from a config file.
    #[command(after_help = config_help())]
    Run(RunArgs),
}

#[derive(Args)]
struct MarginArgs {
    #[arg(long, default_value_t = 0.05)]
    p_u: f64,
    #[arg(long, default_value = "moment")]
    estimator: ShapeEstimator,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    margins: MarginArgs,
    /// Parameter CSV (cell,row,col,u,sigma,xi,p_u,bandwidth).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Direction {
    ToUniform,
    ToOriginal,
}

#[derive(Args)]
struct TransformArgs {
    #[arg(long)]
    input: PathBuf,
    /// Original-scale stack the margins are fitted on (default: the input).
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "to-uniform")]
    direction: Direction,
    #[command(flatten)]
    margins: MarginArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectionArgs {
    #[arg(long, default_value = "median")]
    risk: RiskFunctional,
    /// Keep the k largest declustered events.
    #[arg(long, conflicts_with = "threshold")]
    top_k: Option<usize>,
    /// Keep every declustered event with summary above this level.
    #[arg(long, allow_hyphen_values = true)]
    threshold: Option<f64>,
    #[arg(long, default_value_t = 2)]
    min_separation: usize,
}

#[derive(Args)]
struct ExtractArgs {
    /// Uniform-scale stack.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    selection: SelectionArgs,
    /// Events CSV (rank,replicate,v,role).
    #[arg(long)]
    out: PathBuf,
    /// Also write the full summary series (replicate,v).
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct LiftArgs {
    /// Uniform-scale stack.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    selection: SelectionArgs,
    #[arg(long, allow_hyphen_values = true)]
    v1: f64,
    #[arg(long, allow_hyphen_values = true)]
    v2: Option<f64>,
    #[arg(long, allow_hyphen_values = true, default_value_t = -0.05)]
    u_marg: f64,
    /// Number of lifted outputs (default: one per event).
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Lift manifest CSV (output_index,source_replicate,v_source,v_new,s).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct ResampleArgs {
    #[arg(long)]
    training: PathBuf,
    #[arg(long)]
    count: usize,
    /// Target grid columns (default: training grid).
    #[arg(long, requires = "ny")]
    nx: Option<usize>,
    #[arg(long, requires = "nx")]
    ny: Option<usize>,
    #[arg(long, default_value_t = 20)]
    n_neighbors: usize,
    #[arg(long)]
    dist_threshold: f64,
    #[arg(long)]
    scan_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    coord_weight: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    nx: usize,
    #[arg(long)]
    ny: usize,
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 0.2)]
    range: f64,
    #[arg(long, default_value_t = 1.0)]
    variance: f64,
    /// gaussian or student:<nu>
    #[arg(long, default_value = "gaussian")]
    family: Family,
    /// none, exponential or log-gaussian
    #[arg(long, default_value = "none")]
    margin: MarginTransform,
    /// auto, dense or circulant
    #[arg(long, default_value = "auto")]
    method: FactorMethod,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    simulations: PathBuf,
    #[arg(long)]
    holdout: PathBuf,
    /// Directory for validation_simulations.csv, validation_holdout.csv and coverage.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override output_dir from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn config_help() -> String {
    let mut s = String::from("Config file: one 'key = value' per line, '#' starts a comment. Keys:\n");
    for (k, d) in KEYS {
        s.push_str(&format!("  {k:<24} {d}\n"));
    }
    s.push_str("The --seed flag overrides 'seed' when given explicitly.");
    s
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring thread pool")?;
    }
    let seed_given = std::env::args().any(|a| a == "--seed" || a.starts_with("--seed="));
    match cli.command {
        Command::FitMargins(a) => {
            let stack = load_grid_stack(&a.input, cli.format)?;
            let models = fit_per_cell(&stack, a.margins.p_u, a.margins.estimator)?;
            write_table(&a.out, |w| write_params_csv(stack.grid(), &models, w))?;
        }
        Command::Transform(a) => {
            let input = load_grid_stack(&a.input, cli.format)?;
            let reference = match &a.reference {
                Some(p) => load_grid_stack(p, cli.format)?,
                None => input.clone(),
            };
            if !reference.grid().same_as(input.grid()) {
                bail!("reference and input grids differ");
            }
            let models = fit_per_cell(&reference, a.margins.p_u, a.margins.estimator)?;
            let out = match a.direction {
                Direction::ToUniform => standardize(&input, &models)?,
                Direction::ToOriginal => back_transform(&input, &models)?,
            };
            save_grid_stack(&out, &a.out, cli.format)?;
        }
        Command::ExtractEvents(a) => {
            let stack = load_grid_stack(&a.input, cli.format)?;
            let series = summary_series(&a.selection.risk, &stack)?;
            let events = select(&a.selection, &series)?;
            write_table(&a.out, |w| {
                writeln!(w, "{EVENTS_CSV_HEADER}")?;
                for (rank, &j) in events.iter().enumerate() {
                    writeln!(w, "{rank},{j},{},training", series.v[j])?;
                }
                Ok(())
            })?;
            if let Some(p) = &a.summary {
                write_table(p, |w| series.write_csv(w))?;
            }
            eprintln!("{} events extracted from {} replicates", events.len(), stack.m());
        }
        Command::Lift(a) => {
            let stack = load_grid_stack(&a.input, cli.format)?;
            let series = summary_series(&a.selection.risk, &stack)?;
            let idx = select(&a.selection, &series)?;
            let events = events_from_stack(&stack, &idx, &a.selection.risk)?;
            let spec = LiftSpec { v1: a.v1, v2: a.v2.unwrap_or(a.v1), u_marg: a.u_marg, seed: cli.seed };
            let lifted = lift_batch(&events, &spec, a.count.unwrap_or(events.len()))?;
            save_grid_stack(&lifted_stack(&lifted)?, &a.out, cli.format)?;
            if let Some(p) = &a.manifest {
                write_table(p, |w| write_manifest(&lifted, w))?;
            }
        }
        Command::Resample(a) => {
            let training = load_grid_stack(&a.training, cli.format)?;
            let target = match (a.nx, a.ny) {
                (Some(nx), Some(ny)) => Grid::unit_square(nx, ny)?,
                _ => *training.grid(),
            };
            let params = DsParams {
                n_neighbors: a.n_neighbors,
                dist_threshold: a.dist_threshold,
                scan_fraction: a.scan_fraction,
                coord_weight: a.coord_weight,
                seed: cli.seed,
            };
            let out = ds_simulate(&training, &target, &params, &BTreeMap::new(), a.count)?;
            save_grid_stack(&out, &a.out, cli.format)?;
        }
        Command::Synth(a) => {
            let spec = SynthSpec {
                grid: Grid::unit_square(a.nx, a.ny)?,
                cov: CovarianceSpec { range: a.range, variance: a.variance },
                m: a.m,
                family: a.family,
                margin: a.margin,
                method: a.method,
                seed: cli.seed,
            };
            save_grid_stack(&simulate(&spec)?, &a.out, cli.format)?;
        }
        Command::Validate(a) => {
            let sims = load_grid_stack(&a.simulations, cli.format)?;
            let hold = load_grid_stack(&a.holdout, cli.format)?;
            let report = validate(&sims, &hold)?;
            std::fs::create_dir_all(&a.out)?;
            write_table(&a.out.join("validation_simulations.csv"), |w| ValidationReport::write_summaries_csv(&report.simulations, w))?;
            write_table(&a.out.join("validation_holdout.csv"), |w| ValidationReport::write_summaries_csv(&report.holdout, w))?;
            write_table(&a.out.join("coverage.csv"), |w| report.write_coverage_csv(w))?;
            print_coverage(&report);
        }
        Command::Run(a) => {
            let mut config = PipelineConfig::load(&a.config)?;
            if let Some(out) = a.out {
                config.output_dir = out;
            }
            if seed_given {
                config.seed = cli.seed;
            }
            let out = run_pipeline(&config)?;
            println!("outputs written to {}", config.output_dir.display());
            println!("config sha256 {}", out.config_hash);
            if let Some(report) = &out.report {
                print_coverage(report);
            }
        }
    }
    Ok(())
}

fn select(sel: &SelectionArgs, series: &uplift::risk::SummarySeries) -> Result<Vec<usize>> {
    Ok(match (sel.top_k, sel.threshold) {
        (Some(k), None) => extract_top_events(series, k, sel.min_separation)?,
        (None, Some(t)) => extract_events(series, t, sel.min_separation, None)?,
        _ => bail!("give exactly one of --top-k or --threshold"),
    })
}

fn print_coverage(report: &ValidationReport) {
    let covered = report.statistic_covered();
    for (name, ok) in uplift::field::FieldSummary::NAMES.iter().zip(covered) {
        println!("{name:<7} {}", if ok { "covered" } else { "not covered" });
    }
    println!("coverage fraction {:.3}", report.coverage_fraction());
}

fn write_table(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}
