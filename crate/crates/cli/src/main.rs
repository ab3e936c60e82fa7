//! `sqabench` — benchmark driver for the layered-Ising sweep engine.
//!
//! Exit statuses: 0 success, 1 runtime failure, 2 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use sqabench_core::backend::BackendKind;
use sqabench_core::harness::{
    aggregate, emit_report, parse_report, ratio, relative_difference, run_benchmark, BenchConfig,
    ReportFormat, ReportRow, DEFAULT_LANES, DEFAULT_REPS, DEFAULT_SWEEPS,
};
use sqabench_core::model::{preset_points, ProblemInstance};
use sqabench_core::verify::{run_suite, Suite};

#[derive(Parser)]
#[command(
    name = "sqabench",
    version,
    about = "Layered-Ising Monte Carlo benchmark with emulated device backends"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run repeated benchmark passes and write an aggregated report.
    Bench(BenchArgs),
    /// Run the built-in verification suites.
    Verify(VerifyArgs),
    /// Generate a deterministic random problem instance file.
    GenInstance(GenInstanceArgs),
    /// Compare two report files metric by metric.
    Compare(CompareArgs),
}

fn parse_backend(s: &str) -> Result<BackendKind, String> {
    s.parse()
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse()
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    s.parse()
}

#[derive(Args)]
struct BenchArgs {
    /// Problem size in qubits.
    #[arg(long)]
    qubits: usize,
    /// Trotter layers per layered system.
    #[arg(long, default_value_t = 128)]
    layers: usize,
    /// Simulation points; defaults to the built-in preset for --qubits.
    #[arg(long)]
    points: Option<usize>,
    /// Monte Carlo sweeps per layered system.
    #[arg(long, default_value_t = DEFAULT_SWEEPS)]
    sweeps: u64,
    /// Repetitions aggregated into the report.
    #[arg(long, default_value_t = DEFAULT_REPS)]
    reps: usize,
    /// Execution backend: reference or parallel.
    #[arg(long, default_value = "parallel", value_parser = parse_backend)]
    backend: BackendKind,
    /// Lanes per execution group.
    #[arg(long, default_value_t = DEFAULT_LANES)]
    lanes: usize,
    /// Deterministic run seed.
    #[arg(long, default_value_t = 1)]
    seed: u32,
    /// Problem instance file; a deterministic instance is generated from the
    /// seed when omitted.
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Report output path.
    #[arg(long)]
    out: PathBuf,
    /// Report format: csv or markdown.
    #[arg(long, default_value = "csv", value_parser = parse_format)]
    format: ReportFormat,
}

#[derive(Args)]
struct VerifyArgs {
    /// Run a single suite instead of all of them.
    #[arg(long, value_parser = parse_suite)]
    suite: Option<Suite>,
    /// Directory holding the reference timing fixtures.
    #[arg(long, default_value = "fixtures")]
    fixtures: PathBuf,
}

#[derive(Args)]
struct GenInstanceArgs {
    /// Problem size in qubits.
    #[arg(long)]
    qubits: usize,
    /// Coupling seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Probability of including each site pair.
    #[arg(long, default_value_t = 0.5)]
    density: f64,
    /// Instance output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Baseline report.
    file_a: PathBuf,
    /// Report to compare against the baseline.
    file_b: PathBuf,
    /// Write the comparison table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comparison table format: csv or markdown.
    #[arg(long, default_value = "csv", value_parser = parse_format)]
    format: ReportFormat,
}

enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bench(args) => cmd_bench(args),
        Command::Verify(args) => cmd_verify(args),
        Command::GenInstance(args) => cmd_gen_instance(args),
        Command::Compare(args) => cmd_compare(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(error)) => {
            eprintln!("error: {error:#}");
            ExitCode::from(1)
        }
    }
}

/// Writes via a sibling temp file and a rename, so an interrupted run never
/// leaves a truncated report at the target path.
fn write_atomic(path: &Path, contents: &str) -> anyhow::Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| anyhow!("output path {} has no file name", path.display()))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path)
        .with_context(|| format!("renaming {} into place", tmp.display()))?;
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    let preset = preset_points(args.qubits as u64).map(|p| p as usize);
    let points = match args.points.or(preset) {
        Some(points) => points,
        None => {
            return Err(CliError::Usage(format!(
                "no preset point count for {} qubits; pass --points",
                args.qubits
            )))
        }
    };
    if args.reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }

    let instance = match &args.instance {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading instance {}", path.display()))?;
            let instance = ProblemInstance::parse(&text)
                .with_context(|| format!("parsing instance {}", path.display()))?;
            if instance.qubit_count() != args.qubits {
                return Err(CliError::Runtime(anyhow!(
                    "instance {} has {} qubits but --qubits is {}",
                    path.display(),
                    instance.qubit_count(),
                    args.qubits
                )));
            }
            Some(instance)
        }
        None => None,
    };

    let config = BenchConfig {
        qubits: args.qubits,
        layers: args.layers,
        points,
        sweeps: args.sweeps,
        lanes_per_group: args.lanes,
        backend: args.backend,
        seed: args.seed,
        instance,
    };

    let mut records = Vec::with_capacity(args.reps);
    for _ in 0..args.reps {
        records.push(run_benchmark(&config)?);
    }
    let stats = aggregate(&records)?;
    let report = emit_report(std::slice::from_ref(&stats), args.format);
    write_atomic(&args.out, &report)?;
    println!(
        "bench: qubits={} layers={} points={} sweeps={} reps={} backend={} seed={} -> {}",
        args.qubits,
        args.layers,
        points,
        args.sweeps,
        args.reps,
        args.backend,
        args.seed,
        args.out.display()
    );
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<(), CliError> {
    let suites: Vec<Suite> = match args.suite {
        Some(suite) => vec![suite],
        None => Suite::ALL.to_vec(),
    };
    let mut failures = 0;
    for suite in suites {
        match run_suite(suite, &args.fixtures) {
            Ok(()) => println!("PASS {}", suite.name()),
            Err(reason) => {
                println!("FAIL {}: {reason}", suite.name());
                failures += 1;
            }
        }
    }
    if failures > 0 {
        return Err(CliError::Runtime(anyhow!("{failures} suite(s) failed")));
    }
    Ok(())
}

fn cmd_gen_instance(args: GenInstanceArgs) -> Result<(), CliError> {
    let instance = ProblemInstance::generate(args.qubits, args.seed, args.density)?;
    write_atomic(&args.out, &instance.to_text())?;
    println!(
        "gen-instance: qubits={} seed={} density={} couplings={} -> {}",
        args.qubits,
        args.seed,
        args.density,
        instance.couplings().len(),
        args.out.display()
    );
    Ok(())
}

/// Metrics compared between two reports, in output order.
const COMPARE_METRICS: [&str; 4] = ["kernel", "transfer", "gpu_ops", "end_to_end"];

fn comparable_rows(rows: &[ReportRow], which: &Path) -> Result<Vec<(u64, String, f64)>, CliError> {
    let mut keyed: Vec<(u64, String, f64)> = Vec::new();
    for row in rows {
        if COMPARE_METRICS.contains(&row.metric.as_str()) {
            if keyed
                .iter()
                .any(|(q, m, _)| *q == row.qubits && *m == row.metric)
            {
                return Err(CliError::Runtime(anyhow!(
                    "{}: duplicate row key ({}, {})",
                    which.display(),
                    row.qubits,
                    row.metric
                )));
            }
            keyed.push((row.qubits, row.metric.clone(), row.mean));
        }
    }
    Ok(keyed)
}

fn cmd_compare(args: CompareArgs) -> Result<(), CliError> {
    let read = |path: &Path| -> Result<Vec<ReportRow>, CliError> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading report {}", path.display()))?;
        Ok(parse_report(&text).with_context(|| format!("parsing report {}", path.display()))?)
    };
    let rows_a = comparable_rows(&read(&args.file_a)?, &args.file_a)?;
    let rows_b = comparable_rows(&read(&args.file_b)?, &args.file_b)?;

    let keys_a: Vec<(u64, &str)> = rows_a.iter().map(|(q, m, _)| (*q, m.as_str())).collect();
    let keys_b: Vec<(u64, &str)> = rows_b.iter().map(|(q, m, _)| (*q, m.as_str())).collect();
    let missing_in_b: Vec<_> = keys_a.iter().filter(|k| !keys_b.contains(k)).collect();
    let missing_in_a: Vec<_> = keys_b.iter().filter(|k| !keys_a.contains(k)).collect();
    if !missing_in_a.is_empty() || !missing_in_b.is_empty() {
        return Err(CliError::Runtime(anyhow!(
            "report row keys do not match; missing in {}: {missing_in_b:?}; missing in {}: {missing_in_a:?}",
            args.file_b.display(),
            args.file_a.display()
        )));
    }

    let mut ordered = rows_a.clone();
    ordered.sort_by_key(|(qubits, metric, _)| {
        (
            *qubits,
            COMPARE_METRICS
                .iter()
                .position(|m| m == metric)
                .unwrap_or(usize::MAX),
        )
    });

    let mut lines = Vec::new();
    for (qubits, metric, base) in &ordered {
        let other = rows_b
            .iter()
            .find(|(q, m, _)| q == qubits && m == metric)
            .map(|(_, _, mean)| *mean)
            .expect("key sets were checked equal");
        let r = ratio(other, *base)?;
        let rd = relative_difference(*base, other)?;
        lines.push((*qubits, metric.clone(), *base, other, r, rd));
    }

    let mut out = String::new();
    match args.format {
        ReportFormat::Csv => {
            out.push_str("qubits,metric,base_mean_s,other_mean_s,ratio,relative_difference\n");
            for (qubits, metric, base, other, r, rd) in &lines {
                out.push_str(&format!("{qubits},{metric},{base},{other},{r},{rd}\n"));
            }
        }
        ReportFormat::Markdown => {
            out.push_str(
                "| qubits | metric | base_mean_s | other_mean_s | ratio | relative_difference |\n",
            );
            out.push_str("|---|---|---|---|---|---|\n");
            for (qubits, metric, base, other, r, rd) in &lines {
                out.push_str(&format!(
                    "| {qubits} | {metric} | {base:.3} | {other:.3} | {r:.3} | {rd:.3} |\n"
                ));
            }
        }
    }

    match &args.out {
        Some(path) => write_atomic(path, &out)?,
        None => print!("{out}"),
    }
    Ok(())
}
