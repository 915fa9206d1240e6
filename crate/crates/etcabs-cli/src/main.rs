//! Command-line surface of the abstraction pipeline: build from a config,
//! simulate traces against a built abstraction, Monte Carlo validation, and
//! format exports.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use etcabs::abstraction::{
    build_abstraction, monte_carlo_validate, validate_trace, Abstraction,
};
use etcabs::config::RunConfig;
use etcabs::etc::write_trace_csv;
use etcabs::isochron::write_radial_sweep_csv;
use etcabs::overapprox::{emit_smtlib_query, write_segments_csv};
use etcabs::partition::write_region_table_csv;

const EXIT_VALIDATION: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_PIPELINE: u8 = 3;
const EXIT_COVERAGE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "etcabs",
    about = "Finite-state traffic abstractions of homogeneous event-triggered control systems",
    long_about = "Builds finite transition systems whose states partition the plant state space \
by inner approximations of isochronous manifolds intersected with cones, whose outputs are \
certified inter-event-time intervals, and whose transitions overapproximate the sampled \
successor relation.\n\nExit codes: 0 success, 1 validation failure, 2 configuration error, \
3 pipeline error, 4 state outside the covered bands.\n\nThe environment variable \
ETCABS_OUTPUT_DIR overrides the build output directory."
)]
struct Cli {
    /// Worker threads for the parallel pipeline stages (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Print stage progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline from a TOML or JSON config and write the
    /// abstraction plus companion files to the output directory.
    Build(BuildArgs),
    /// Simulate the sample-and-hold loop from an initial state and validate
    /// the trace against a built abstraction.
    Simulate(SimulateArgs),
    /// Monte Carlo soundness suite: per-region inter-event-time containment
    /// and transition completeness.
    Validate(ValidateArgs),
    /// Re-serialize a built abstraction in another format.
    Export(ExportArgs),
}

#[derive(Args)]
struct BuildArgs {
    /// Path to the run configuration (.toml or .json).
    config: PathBuf,
    /// Output directory (overrides the config and ETCABS_OUTPUT_DIR).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Path to abstraction.json.
    abstraction: PathBuf,
    /// Initial state, comma separated (e.g. --x0 1.5,2.0).
    #[arg(long, value_delimiter = ',', required = true)]
    x0: Vec<f64>,
    /// Simulation duration in seconds.
    #[arg(long)]
    duration: f64,
    /// Where to write trace.csv and validation.json (default: alongside the
    /// abstraction).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Path to abstraction.json.
    abstraction: PathBuf,
    /// Samples per region.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExportArgs {
    /// Path to abstraction.json.
    abstraction: PathBuf,
    /// One of: json, dot, csv-bounds, csv-transitions, csv (both CSVs).
    #[arg(long)]
    format: String,
    /// Output file (default: stdout; `csv` requires a directory).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(workers) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
        {
            eprintln!("error: cannot size worker pool: {e}");
            return ExitCode::from(EXIT_PIPELINE);
        }
    }
    match cli.command {
        Command::Build(args) => cmd_build(args, cli.verbose),
        Command::Simulate(args) => cmd_simulate(args, cli.verbose),
        Command::Validate(args) => cmd_validate(args, cli.verbose),
        Command::Export(args) => cmd_export(args),
    }
}

fn load_abstraction(path: &Path) -> Result<Abstraction> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    Ok(Abstraction::from_json(&value)?)
}

fn cmd_build(args: BuildArgs, verbose: bool) -> ExitCode {
    let config = match RunConfig::from_path(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let out_dir = args
        .out
        .or_else(|| std::env::var("ETCABS_OUTPUT_DIR").ok().map(PathBuf::from))
        .or_else(|| config.output_dir.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    if verbose {
        eprintln!("building abstraction into {}", out_dir.display());
    }
    let (abstraction, report) = match build_abstraction(&config) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("pipeline error: {e}");
            return ExitCode::from(EXIT_PIPELINE);
        }
    };
    if verbose {
        for (stage, secs) in &report.stage_seconds {
            eprintln!("  {stage}: {secs:.3}s");
        }
        for w in &report.warnings {
            eprintln!("  warning: {w}");
        }
    }
    match write_build_outputs(&out_dir, &config, &abstraction, &report) {
        Ok(()) => {
            println!(
                "{} states, {} transitions, precision {:.6e} s -> {}",
                abstraction.states.len(),
                abstraction.transitions.len(),
                abstraction.epsilon,
                out_dir.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("write error: {e:#}");
            ExitCode::from(EXIT_PIPELINE)
        }
    }
}

fn write_build_outputs(
    out_dir: &Path,
    config: &RunConfig,
    a: &Abstraction,
    report: &etcabs::abstraction::BuildReport,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("abstraction.json"), a.export("json")?)?;
    std::fs::write(out_dir.join("graph.dot"), a.export("dot")?)?;
    std::fs::write(out_dir.join("bounds.csv"), a.export("csv-bounds")?)?;
    std::fs::write(out_dir.join("transitions.csv"), a.export("csv-transitions")?)?;
    let mut segments_csv = Vec::new();
    let segs = a
        .states
        .iter()
        .map(|s| ((s.region.band, s.region.cone), s.segment.clone()))
        .collect();
    write_segments_csv(&mut segments_csv, &segs)?;
    std::fs::write(out_dir.join("segments.csv"), segments_csv)?;
    let mut regions_csv = Vec::new();
    let regions: Vec<_> = a.states.iter().map(|s| s.region.clone()).collect();
    write_region_table_csv(&mut regions_csv, &regions, &a.cones)?;
    std::fs::write(out_dir.join("regions.csv"), regions_csv)?;
    let mut sweep_csv = Vec::new();
    write_radial_sweep_csv(&mut sweep_csv, &a.mu, &a.times, 256, 1e-8)?;
    std::fs::write(out_dir.join("radial_sweep.csv"), sweep_csv)?;
    if config.overapprox.emit_smtlib {
        let smt_dir = out_dir.join("smt");
        std::fs::create_dir_all(&smt_dir)?;
        let q = a.times.len();
        for s in &a.states {
            let (i, j) = (s.region.band, s.region.cone);
            let cone = &a.cones[j - 1];
            let query = emit_smtlib_query(&a.mu, cone, a.times[i - 1], s.segment.r_outer, false)?;
            std::fs::write(smt_dir.join(format!("outer_band{i}_cone{j}.smt2")), query)?;
            if i < q {
                let query =
                    emit_smtlib_query(&a.mu, cone, a.times[i], s.segment.r_inner, true)?;
                std::fs::write(smt_dir.join(format!("inner_band{i}_cone{j}.smt2")), query)?;
            }
        }
    }
    let manifest = serde_json::json!({
        "config_digest": a.config_digest,
        "states": a.states.len(),
        "transitions": a.transitions.len(),
        "epsilon": a.epsilon,
        "stage_seconds": report.stage_seconds.to_vec(),
        "warnings": report.warnings,
        "delta_used_fallback": report.delta_report.as_ref().map(|r| r.used_fallback),
    });
    std::fs::write(
        out_dir.join("manifest.json"),
        format!("{manifest:#}\n"),
    )?;
    Ok(())
}

fn cmd_simulate(args: SimulateArgs, verbose: bool) -> ExitCode {
    let a = match load_abstraction(&args.abstraction) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if args.x0.iter().all(|&v| v == 0.0) {
        eprintln!("error: the origin has no inter-event time");
        return ExitCode::from(EXIT_CONFIG);
    }
    if a.classify(&args.x0).is_none() {
        eprintln!(
            "error: initial state {:?} lies outside the covered bands",
            args.x0
        );
        return ExitCode::from(EXIT_COVERAGE);
    }
    let params = a.default_oracle_params();
    let trace = match a.simulate(&args.x0, args.duration, &params) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("simulation error: {e}");
            return ExitCode::from(EXIT_PIPELINE);
        }
    };
    let report = validate_trace(&a, &trace);
    let out_dir = args
        .out
        .unwrap_or_else(|| args.abstraction.parent().unwrap_or(Path::new(".")).to_path_buf());
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        eprintln!("write error: {e}");
        return ExitCode::from(EXIT_PIPELINE);
    }
    let mut csv = Vec::new();
    if write_trace_csv(&mut csv, &trace, a.system.n).is_err()
        || std::fs::write(out_dir.join("trace.csv"), csv).is_err()
    {
        eprintln!("write error: cannot write trace.csv");
        return ExitCode::from(EXIT_PIPELINE);
    }
    let summary = serde_json::json!({
        "events": report.events_checked,
        "passed": report.passed(),
        "time_violations": report.time_violations.len(),
        "path_violations": report.path_violations.len(),
        "coverage_violations": report.coverage_violations.len(),
    });
    if std::fs::write(out_dir.join("validation.json"), format!("{summary:#}\n")).is_err() {
        eprintln!("write error: cannot write validation.json");
        return ExitCode::from(EXIT_PIPELINE);
    }
    if verbose {
        eprintln!("{} events simulated", trace.len());
    }
    println!(
        "{} events, validation {}",
        report.events_checked,
        if report.passed() { "passed" } else { "FAILED" }
    );
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_VALIDATION)
    }
}

fn cmd_validate(args: ValidateArgs, verbose: bool) -> ExitCode {
    let a = match load_abstraction(&args.abstraction) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if args.samples == 0 {
        println!("warning: 0 samples requested; vacuous pass");
        return ExitCode::SUCCESS;
    }
    if verbose {
        eprintln!(
            "sampling {} points in each of {} regions",
            args.samples,
            a.outputs.len()
        );
    }
    let report = monte_carlo_validate(&a, args.samples, args.seed);
    println!(
        "regions: {}, samples/region: {}, worst lower margin: {:.3e}, worst upper margin: {:.3e}",
        report.regions_checked,
        report.samples_per_region,
        report.worst_lower_margin,
        report.worst_upper_margin
    );
    println!(
        "time violations: {}, missing transitions: {}, successors outside coverage: {}",
        report.time_violations.len(),
        report.missing_edges.len(),
        report.successors_outside
    );
    for (region, x, tau) in report.time_violations.iter().take(10) {
        println!("  violation: region {region:?}, x = {x:?}, oracle tau = {tau}");
    }
    for (src, dst) in report.missing_edges.iter().take(10) {
        println!("  missing edge: {src:?} -> {dst:?}");
    }
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_VALIDATION)
    }
}

fn cmd_export(args: ExportArgs) -> ExitCode {
    let a = match load_abstraction(&args.abstraction) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if args.format == "csv" {
        let dir = match &args.out {
            Some(d) => d.clone(),
            None => {
                eprintln!("error: --format csv writes two files; pass --out <dir>");
                return ExitCode::from(EXIT_CONFIG);
            }
        };
        if std::fs::create_dir_all(&dir).is_err() {
            eprintln!("error: cannot create {}", dir.display());
            return ExitCode::from(EXIT_PIPELINE);
        }
        let b = a.export("csv-bounds").expect("known format");
        let t = a.export("csv-transitions").expect("known format");
        if std::fs::write(dir.join("bounds.csv"), b).is_err()
            || std::fs::write(dir.join("transitions.csv"), t).is_err()
        {
            eprintln!("error: write failed");
            return ExitCode::from(EXIT_PIPELINE);
        }
        return ExitCode::SUCCESS;
    }
    let bytes = match a.export(&args.format) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match args.out {
        Some(path) => {
            if std::fs::write(&path, bytes).is_err() {
                eprintln!("error: cannot write {}", path.display());
                return ExitCode::from(EXIT_PIPELINE);
            }
        }
        None => {
            use std::io::Write;
            let _ = std::io::stdout().write_all(&bytes);
        }
    }
    ExitCode::SUCCESS
}
