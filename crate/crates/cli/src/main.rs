//! `fedaug` command-line entry point.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedaug_core::config::RunConfig;
use fedaug_core::engine::run_simulation_observed;
use fedaug_core::engine::load_dataset;
use fedaug_core::probe::{export_probe, run_probe, ProbeSettings};
use fedaug_core::report::{compare_runs, export_run, format_comparison};
use fedaug_core::Error;

const EXIT_OTHER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_OUTPUT: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "fedaug", version, about = "Deterministic federated-learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a federated run and write metrics.csv, report.json and summary.txt.
    Run(RunArgs),
    /// Measure local-learning bias on a class-split dataset.
    Probe(RunArgs),
    /// Tabulate two or more finished runs.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Configuration file; every key has a default.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a value, e.g. `--set algorithm.kind=fedaug`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set schedule.seed=N`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: `<output root>/<algorithm>-seed<N>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root used when neither `--out` nor `output.dir` is given.
    #[arg(long, env = "FEDAUG_OUT_ROOT", default_value = "runs")]
    out_root: PathBuf,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Suppress per-evaluation progress on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Run directories, each containing metrics.csv.
    #[arg(required = true)]
    dirs: Vec<PathBuf>,
    /// Index (in the given order) of the run used for speedups.
    #[arg(long, default_value_t = 0)]
    baseline: usize,
    #[arg(long, default_value_t = 5)]
    top_k: usize,
    /// Mean-accuracy level for rounds-to-threshold, as a fraction.
    #[arg(long, default_value_t = 0.8)]
    threshold: f64,
}

#[derive(Debug)]
enum Failure {
    Core(Error),
    Usage(String),
    OutputExists(PathBuf),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_CONFIG,
            Failure::OutputExists(_) => EXIT_OUTPUT,
            Failure::Core(e) if e.is_config_error() => EXIT_CONFIG,
            Failure::Core(e) if e.is_data_error() => EXIT_DATA,
            Failure::Core(Error::Io { .. }) => EXIT_OUTPUT,
            Failure::Core(_) => EXIT_OTHER,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Core(e) => e.to_string(),
            Failure::Usage(m) => m.clone(),
            Failure::OutputExists(p) => format!(
                "output directory {} is not empty; pass --force to write into it",
                p.display()
            ),
        }
    }
}

fn load_config(args: &RunArgs) -> Result<RunConfig, Failure> {
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("schedule.seed={seed}"));
    }
    Ok(RunConfig::load(args.config.as_deref(), &overrides)?)
}

fn output_dir(args: &RunArgs, config: &RunConfig, default_name: String) -> Result<PathBuf, Failure> {
    let dir = match &args.out {
        Some(d) => d.clone(),
        None if !config.output.dir.as_os_str().is_empty() => config.output.dir.clone(),
        None => args.out_root.join(default_name),
    };
    if !args.force && is_non_empty_dir(&dir) {
        return Err(Failure::OutputExists(dir));
    }
    Ok(dir)
}

fn is_non_empty_dir(dir: &Path) -> bool {
    std::fs::read_dir(dir).is_ok_and(|mut it| it.next().is_some())
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let config = load_config(args)?;
    let name = format!("{}-seed{}", config.algorithm.kind, config.schedule.seed);
    let dir = output_dir(args, &config, name)?;
    let quiet = args.quiet;
    let report = run_simulation_observed(&config, |m| {
        if !quiet {
            eprintln!(
                "round {:>4}  mean acc {:6.2}  worst acc {:6.2}",
                m.round,
                100.0 * m.mean_accuracy,
                100.0 * m.worst_accuracy
            );
        }
    })?;
    export_run(&report, &dir)?;
    let s = &report.summary;
    println!(
        "{} seed {}: top-{k} mean acc {:.2}, top-{k} worst acc {:.2}, rounds to {:.2}%: {} ({:.1}s, wrote {})",
        config.algorithm.kind,
        config.schedule.seed,
        100.0 * s.top_k_mean_accuracy,
        100.0 * s.top_k_worst_accuracy,
        100.0 * s.acc_threshold,
        s.rounds_to_threshold.map_or_else(|| "-".to_string(), |r| r.to_string()),
        report.duration_secs,
        dir.display(),
        k = s.top_k,
    );
    Ok(())
}

fn cmd_probe(args: &RunArgs) -> Result<(), Failure> {
    let config = load_config(args)?;
    let dir = output_dir(args, &config, format!("probe-seed{}", config.schedule.seed))?;
    let ds = load_dataset(&config)?;
    let run = run_probe(&ds, &ProbeSettings::from_config(&config))?;
    export_probe(&run, &dir)?;
    let r = &run.report;
    println!(
        "classifier_bias {:.4}  s_local {:.4}  s_cross {:.4}  bias detected: {} (wrote {})",
        r.classifier_bias,
        r.s_local,
        r.s_cross,
        r.bias_detected,
        dir.display()
    );
    Ok(())
}

fn cmd_compare(args: &CompareArgs) -> Result<(), Failure> {
    if args.dirs.len() < 2 {
        return Err(Failure::Usage("compare needs at least two run directories".into()));
    }
    if !(0.0..=1.0).contains(&args.threshold) {
        return Err(Failure::Usage(format!(
            "--threshold must be a fraction in [0, 1], got {}",
            args.threshold
        )));
    }
    let rows = compare_runs(&args.dirs, args.baseline, args.top_k, args.threshold)?;
    print!("{}", format_comparison(&rows, args.top_k, args.threshold));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Probe(a) => cmd_probe(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("fedaug: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
