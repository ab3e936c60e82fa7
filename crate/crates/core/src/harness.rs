//! Phase timing, repeated-run statistics, derived comparative metrics, and
//! report emission.
//!
//! A benchmark run walks six phases in order — setup, input, copy-in, kernel,
//! copy-out, post-process — timing each with the monotonic clock. The GPU
//! operations time is the sum of the copy-in, kernel, and copy-out phases;
//! end-to-end covers all six.

use std::time::Instant;

use thiserror::Error;

use crate::backend::{execute, plan, transfer_in, transfer_out, BackendKind};
use crate::model::{build_schedule, total_energy, trotterize, LayeredSystem, ProblemInstance};
use crate::rng::RngState;

/// Canonical sweep count per layered system.
pub const DEFAULT_SWEEPS: u64 = 20_000;
/// Canonical repetition count for averaged timings.
pub const DEFAULT_REPS: usize = 10;
/// Default lanes per execution group.
pub const DEFAULT_LANES: usize = 32;
/// Coupling density used when a run generates its own instance.
pub const DEFAULT_DENSITY: f64 = 0.5;
/// Default initial transverse-field strength for generated schedules.
pub const DEFAULT_GAMMA0: f64 = 1.0;
/// Default inverse temperature for generated schedules.
pub const DEFAULT_BETA: f64 = 1.0;

/// Metric rows emitted per run, in fixed report order.
pub const REPORT_METRICS: [&str; 11] = [
    "setup",
    "input",
    "copy_in",
    "kernel",
    "copy_out",
    "post",
    "transfer",
    "gpu_ops",
    "end_to_end",
    "flips",
    "spin_digest",
];

const REPORT_HEADER: &str = "qubits,backend,metric,mean_s,stdev_s,bytes_in,bytes_out";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("phase {phase} failed: {source}")]
    Phase {
        phase: &'static str,
        source: PhaseFailure,
    },
    #[error("cannot aggregate an empty record set")]
    EmptyAggregate,
    #[error("records disagree on {field}; aggregation needs a homogeneous set")]
    Heterogeneous { field: &'static str },
    #[error("relative difference needs a positive base time (got {0})")]
    NonpositiveBase(f64),
    #[error("ratio needs a positive denominator (got {0})")]
    NonpositiveDenominator(f64),
    #[error("throughput needs a positive kernel time (got {0})")]
    NonpositiveKernelTime(f64),
    #[error("line {line}: {message}")]
    ReportParse { line: usize, message: String },
}

/// Anything a benchmark phase can fail with.
#[derive(Debug, Error)]
pub enum PhaseFailure {
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Backend(#[from] crate::backend::BackendError),
    #[error(transparent)]
    Rng(#[from] crate::rng::RngError),
}

fn phase_error<E: Into<PhaseFailure>>(phase: &'static str) -> impl FnOnce(E) -> HarnessError {
    move |e| HarnessError::Phase {
        phase,
        source: e.into(),
    }
}

/// Full description of one benchmark configuration.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub qubits: usize,
    pub layers: usize,
    pub points: usize,
    pub sweeps: u64,
    pub lanes_per_group: usize,
    pub backend: BackendKind,
    pub seed: u32,
    /// Explicit problem instance; a deterministic one is generated from the
    /// seed at [`DEFAULT_DENSITY`] when absent.
    pub instance: Option<ProblemInstance>,
}

/// The run descriptors attached to every record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunDescriptor {
    pub qubits: usize,
    pub layers: usize,
    pub points: usize,
    pub sweeps: u64,
    pub backend: BackendKind,
    pub seed: u32,
}

/// Wall-clock durations of the six run phases plus transfer byte counts and
/// the deterministic outputs of the run.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseRecord {
    pub desc: RunDescriptor,
    pub setup_s: f64,
    pub input_s: f64,
    pub copy_in_s: f64,
    pub kernel_s: f64,
    pub copy_out_s: f64,
    pub post_s: f64,
    pub bytes_in: u64,
    pub bytes_out: u64,
    pub flips: u64,
    pub spin_digest: u32,
    /// Final per-point energies computed in the post phase.
    pub final_energies: Vec<f64>,
}

impl PhaseRecord {
    /// Sum of the copy-in, kernel, and copy-out phases.
    pub fn gpu_ops_s(&self) -> f64 {
        self.copy_in_s + self.kernel_s + self.copy_out_s
    }

    /// Sum of all six phases.
    pub fn end_to_end_s(&self) -> f64 {
        self.setup_s + self.input_s + self.copy_in_s + self.kernel_s + self.copy_out_s + self.post_s
    }

    /// Copy-in plus copy-out.
    pub fn transfer_s(&self) -> f64 {
        self.copy_in_s + self.copy_out_s
    }

    fn metric_value(&self, metric: &str) -> f64 {
        match metric {
            "setup" => self.setup_s,
            "input" => self.input_s,
            "copy_in" => self.copy_in_s,
            "kernel" => self.kernel_s,
            "copy_out" => self.copy_out_s,
            "post" => self.post_s,
            "transfer" => self.transfer_s(),
            "gpu_ops" => self.gpu_ops_s(),
            "end_to_end" => self.end_to_end_s(),
            "flips" => self.flips as f64,
            "spin_digest" => f64::from(self.spin_digest),
            other => unreachable!("unknown metric {other}"),
        }
    }
}

/// FNV-1a digest of the final spin configuration, group order.
pub fn spin_digest(systems: &[LayeredSystem]) -> u32 {
    let mut hash: u32 = 0x811c_9dc5;
    for system in systems {
        for spin in &system.spins {
            hash ^= u32::from(*spin as u8);
            hash = hash.wrapping_mul(0x0100_0193);
        }
    }
    hash
}

/// Executes the six benchmark phases in order, timing each one. Phase
/// boundaries sit tight around the phase work; harness bookkeeping happens
/// outside the timed sections.
pub fn run_benchmark(config: &BenchConfig) -> Result<PhaseRecord, HarnessError> {
    // Phase 1: setup — execution plan plus generator allocation and seeding.
    let started = Instant::now();
    let exec_plan = plan(config.points, config.lanes_per_group, config.backend);
    let mut rng =
        RngState::alloc(config.points, config.lanes_per_group).map_err(phase_error("setup"))?;
    rng.init(config.seed);
    let setup_s = started.elapsed().as_secs_f64();

    // Phase 2: input — problem instance, schedule, layered systems.
    let started = Instant::now();
    let instance = match &config.instance {
        Some(instance) => {
            if instance.qubit_count() != config.qubits {
                return Err(HarnessError::Phase {
                    phase: "input",
                    source: crate::model::ModelError::Parse {
                        line: 0,
                        message: format!(
                            "instance has {} qubits, config says {}",
                            instance.qubit_count(),
                            config.qubits
                        ),
                    }
                    .into(),
                });
            }
            instance.clone()
        }
        None => ProblemInstance::generate(config.qubits, u64::from(config.seed), DEFAULT_DENSITY)
            .map_err(phase_error("input"))?,
    };
    let anneal = build_schedule(config.points, DEFAULT_GAMMA0, DEFAULT_BETA)
        .map_err(phase_error("input"))?;
    let mut systems = Vec::with_capacity(config.points);
    for point in anneal.points() {
        systems.push(
            trotterize(&instance, point, config.layers, &mut rng, point.index, 0)
                .map_err(phase_error("input"))?,
        );
    }
    let input_s = started.elapsed().as_secs_f64();

    // Phase 3: copy data to the device-side buffers.
    let started = Instant::now();
    let staged = transfer_in(&systems).map_err(phase_error("copy_in"))?;
    let copy_in_s = started.elapsed().as_secs_f64();
    let bytes_in = staged.byte_count_in();

    // Phase 4: run the kernel.
    let started = Instant::now();
    let output =
        execute(&exec_plan, &staged, config.sweeps, &mut rng).map_err(phase_error("kernel"))?;
    let kernel_s = started.elapsed().as_secs_f64();

    // Phase 5: copy data back to the host.
    let started = Instant::now();
    let mut returned_buffers = output.buffers;
    let returned = transfer_out(&mut returned_buffers).map_err(phase_error("copy_out"))?;
    let copy_out_s = started.elapsed().as_secs_f64();
    let bytes_out = returned_buffers.byte_count_out();

    // Phase 6: post-process the returned data.
    let started = Instant::now();
    let final_energies: Vec<f64> = returned.iter().map(total_energy).collect();
    let digest = spin_digest(&returned);
    let flips: u64 = output.points.iter().map(|p| p.flips).sum();
    let post_s = started.elapsed().as_secs_f64();

    Ok(PhaseRecord {
        desc: RunDescriptor {
            qubits: config.qubits,
            layers: config.layers,
            points: config.points,
            sweeps: config.sweeps,
            backend: config.backend,
            seed: config.seed,
        },
        setup_s,
        input_s,
        copy_in_s,
        kernel_s,
        copy_out_s,
        post_s,
        bytes_in,
        bytes_out,
        flips,
        spin_digest: digest,
        final_energies,
    })
}

/// Mean and sample standard deviation per metric over repeated runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunStats {
    pub desc: RunDescriptor,
    pub reps: usize,
    /// `(metric, mean, stdev)` in [`REPORT_METRICS`] order.
    pub metrics: Vec<(&'static str, f64, f64)>,
    pub bytes_in: u64,
    pub bytes_out: u64,
}

fn mean_and_sample_stdev(samples: &[f64]) -> (f64, f64) {
    // Summation runs over a sorted copy so the result is exactly
    // permutation-invariant, not just up to rounding.
    let mut ordered = samples.to_vec();
    ordered.sort_by(f64::total_cmp);
    let n = ordered.len();
    let mean = ordered.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let sum_sq: f64 = ordered.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (sum_sq / (n - 1) as f64).sqrt())
}

/// Aggregates repeated records of one configuration into per-metric mean and
/// sample standard deviation.
pub fn aggregate(records: &[PhaseRecord]) -> Result<RunStats, HarnessError> {
    let first = records.first().ok_or(HarnessError::EmptyAggregate)?;
    for record in records {
        if record.desc != first.desc {
            return Err(HarnessError::Heterogeneous {
                field: "descriptor",
            });
        }
        if record.bytes_in != first.bytes_in || record.bytes_out != first.bytes_out {
            return Err(HarnessError::Heterogeneous {
                field: "byte counts",
            });
        }
    }
    let metrics = REPORT_METRICS
        .iter()
        .map(|metric| {
            let samples: Vec<f64> = records.iter().map(|r| r.metric_value(metric)).collect();
            let (mean, stdev) = mean_and_sample_stdev(&samples);
            (*metric, mean, stdev)
        })
        .collect();
    Ok(RunStats {
        desc: first.desc,
        reps: records.len(),
        metrics,
        bytes_in: first.bytes_in,
        bytes_out: first.bytes_out,
    })
}

/// `(t_other - t_base) / t_base`.
pub fn relative_difference(t_base: f64, t_other: f64) -> Result<f64, HarnessError> {
    if t_base <= 0.0 || t_base.is_nan() {
        return Err(HarnessError::NonpositiveBase(t_base));
    }
    Ok((t_other - t_base) / t_base)
}

/// `t_num / t_den`.
pub fn ratio(t_num: f64, t_den: f64) -> Result<f64, HarnessError> {
    if t_den <= 0.0 || t_den.is_nan() {
        return Err(HarnessError::NonpositiveDenominator(t_den));
    }
    Ok(t_num / t_den)
}

/// Variable updates per second: `variables * sweeps / kernel_seconds`.
pub fn throughput(variables: u64, sweeps: u64, kernel_seconds: f64) -> Result<f64, HarnessError> {
    if kernel_seconds <= 0.0 || kernel_seconds.is_nan() {
        return Err(HarnessError::NonpositiveKernelTime(kernel_seconds));
    }
    Ok(variables as f64 * sweeps as f64 / kernel_seconds)
}

/// Report output format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown format `{other}`")),
        }
    }
}

/// Renders aggregated stats with the fixed column order
/// `qubits,backend,metric,mean_s,stdev_s,bytes_in,bytes_out`. CSV carries
/// full-precision values; markdown rounds to three decimals.
pub fn emit_report(stats: &[RunStats], format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str(REPORT_HEADER);
            out.push('\n');
            for run in stats {
                for (metric, mean, stdev) in &run.metrics {
                    out.push_str(&format!(
                        "{},{},{},{},{},{},{}\n",
                        run.desc.qubits,
                        run.desc.backend,
                        metric,
                        mean,
                        stdev,
                        run.bytes_in,
                        run.bytes_out
                    ));
                }
            }
        }
        ReportFormat::Markdown => {
            out.push_str(
                "| qubits | backend | metric | mean_s | stdev_s | bytes_in | bytes_out |\n",
            );
            out.push_str("|---|---|---|---|---|---|---|\n");
            for run in stats {
                for (metric, mean, stdev) in &run.metrics {
                    out.push_str(&format!(
                        "| {} | {} | {} | {:.3} | {:.3} | {} | {} |\n",
                        run.desc.qubits,
                        run.desc.backend,
                        metric,
                        mean,
                        stdev,
                        run.bytes_in,
                        run.bytes_out
                    ));
                }
            }
        }
    }
    out
}

/// One parsed report row.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub qubits: u64,
    pub backend: String,
    pub metric: String,
    pub mean: f64,
    pub stdev: f64,
    pub bytes_in: u64,
    pub bytes_out: u64,
}

/// Parses report CSV back into rows. `#` lines are comments; the header must
/// match the emitted one.
pub fn parse_report(text: &str) -> Result<Vec<ReportRow>, HarnessError> {
    let mut rows = Vec::new();
    let mut saw_header = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.trim();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        if !saw_header {
            if content != REPORT_HEADER {
                return Err(HarnessError::ReportParse {
                    line,
                    message: format!("expected header `{REPORT_HEADER}`"),
                });
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = content.split(',').collect();
        if fields.len() != 7 {
            return Err(HarnessError::ReportParse {
                line,
                message: format!("expected 7 columns, found {}", fields.len()),
            });
        }
        let parse_err = |what: &str, detail: String| HarnessError::ReportParse {
            line,
            message: format!("bad {what}: {detail}"),
        };
        rows.push(ReportRow {
            qubits: fields[0]
                .parse()
                .map_err(|e: std::num::ParseIntError| parse_err("qubits", e.to_string()))?,
            backend: fields[1].to_string(),
            metric: fields[2].to_string(),
            mean: fields[3]
                .parse()
                .map_err(|e: std::num::ParseFloatError| parse_err("mean_s", e.to_string()))?,
            stdev: fields[4]
                .parse()
                .map_err(|e: std::num::ParseFloatError| parse_err("stdev_s", e.to_string()))?,
            bytes_in: fields[5]
                .parse()
                .map_err(|e: std::num::ParseIntError| parse_err("bytes_in", e.to_string()))?,
            bytes_out: fields[6]
                .parse()
                .map_err(|e: std::num::ParseIntError| parse_err("bytes_out", e.to_string()))?,
        });
    }
    if !saw_header {
        return Err(HarnessError::ReportParse {
            line: 0,
            message: "missing header".into(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(backend: BackendKind, sweeps: u64) -> BenchConfig {
        BenchConfig {
            qubits: 3,
            layers: 4,
            points: 2,
            sweeps,
            lanes_per_group: 2,
            backend,
            seed: 5,
            instance: None,
        }
    }

    fn record_with(kernel_s: f64, seed: u32) -> PhaseRecord {
        PhaseRecord {
            desc: RunDescriptor {
                qubits: 3,
                layers: 4,
                points: 2,
                sweeps: 5,
                backend: BackendKind::Reference,
                seed,
            },
            setup_s: 0.001,
            input_s: 0.002,
            copy_in_s: 0.0005,
            kernel_s,
            copy_out_s: 0.0005,
            post_s: 0.001,
            bytes_in: 100,
            bytes_out: 100,
            flips: 42,
            spin_digest: 7,
            final_energies: vec![0.0, 0.0],
        }
    }

    #[test]
    fn canonical_workload_constants_are_pinned() {
        assert_eq!(DEFAULT_SWEEPS, 20_000);
        assert_eq!(DEFAULT_REPS, 10);
        assert_eq!(DEFAULT_LANES, 32);
    }

    #[test]
    fn benchmark_record_satisfies_accounting_identities() {
        let record = run_benchmark(&tiny_config(BackendKind::Reference, 10)).unwrap();
        let gpu = record.copy_in_s + record.kernel_s + record.copy_out_s;
        assert_eq!(record.gpu_ops_s(), gpu);
        assert!(record.end_to_end_s() >= record.gpu_ops_s());
        assert!(record.gpu_ops_s() >= record.kernel_s);
        assert_eq!(record.bytes_in, record.bytes_out);
        assert!(record.bytes_in > 0);
        assert_eq!(record.final_energies.len(), 2);
    }

    #[test]
    fn zero_sweep_run_is_well_formed() {
        let record = run_benchmark(&tiny_config(BackendKind::Reference, 0)).unwrap();
        assert_eq!(record.flips, 0);
        assert!(record.kernel_s >= 0.0);
    }

    #[test]
    fn repeated_runs_share_all_non_timing_outputs() {
        let config = tiny_config(BackendKind::Parallel, 8);
        let a = run_benchmark(&config).unwrap();
        let b = run_benchmark(&config).unwrap();
        assert_eq!(a.flips, b.flips);
        assert_eq!(a.spin_digest, b.spin_digest);
        assert_eq!(a.bytes_in, b.bytes_in);
        assert_eq!(a.bytes_out, b.bytes_out);
        assert_eq!(a.final_energies, b.final_energies);
    }

    #[test]
    fn aggregate_of_identical_samples_has_zero_stdev() {
        let records = vec![
            record_with(1.0, 1),
            record_with(1.0, 1),
            record_with(1.0, 1),
        ];
        let stats = aggregate(&records).unwrap();
        let kernel = stats
            .metrics
            .iter()
            .find(|(m, _, _)| *m == "kernel")
            .unwrap();
        assert_eq!(kernel.1, 1.0);
        assert_eq!(kernel.2, 0.0);
    }

    #[test]
    fn aggregate_matches_hand_computed_sample_stdev() {
        let records = vec![record_with(2.0, 1), record_with(4.0, 1)];
        let stats = aggregate(&records).unwrap();
        let kernel = stats
            .metrics
            .iter()
            .find(|(m, _, _)| *m == "kernel")
            .unwrap();
        assert_eq!(kernel.1, 3.0);
        assert!((kernel.2 - std::f64::consts::SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn aggregate_is_permutation_invariant() {
        let a = vec![
            record_with(1.0, 1),
            record_with(2.0, 1),
            record_with(7.0, 1),
        ];
        let b = vec![a[2].clone(), a[0].clone(), a[1].clone()];
        assert_eq!(aggregate(&a).unwrap(), aggregate(&b).unwrap());
    }

    #[test]
    fn aggregate_rejects_empty_and_heterogeneous_input() {
        assert!(matches!(aggregate(&[]), Err(HarnessError::EmptyAggregate)));
        let records = vec![record_with(1.0, 1), record_with(1.0, 2)];
        assert!(matches!(
            aggregate(&records),
            Err(HarnessError::Heterogeneous { .. })
        ));
    }

    #[test]
    fn relative_difference_reproduces_published_pairs() {
        assert!((relative_difference(100.76, 113.54).unwrap() - 0.1268).abs() < 5e-4);
        assert!((relative_difference(25.94, 42.17).unwrap() - 0.6257).abs() < 5e-4);
        assert_eq!(relative_difference(3.5, 3.5).unwrap(), 0.0);
        assert!(relative_difference(0.0, 1.0).is_err());
        assert!(relative_difference(-1.0, 1.0).is_err());
    }

    #[test]
    fn ratio_reproduces_published_pairs() {
        assert!((ratio(0.417, 0.306).unwrap() - 1.363).abs() < 5e-4);
        assert!((ratio(0.011, 0.009).unwrap() - 1.222).abs() < 5e-4);
        assert_eq!(ratio(2.5, 2.5).unwrap(), 1.0);
        assert!(ratio(1.0, 0.0).is_err());
    }

    #[test]
    fn throughput_counts_variable_updates_per_second() {
        let big = throughput(2_113_536, 20_000, 100.76).unwrap();
        assert!((big - 4.195e8).abs() < 5e5);
        let small = throughput(27_648, 20_000, 1.96).unwrap();
        assert!((small - 2.821e8).abs() < 5e5);
        assert_eq!(throughput(1, 1, 1.0).unwrap(), 1.0);
        assert!(throughput(1, 1, 0.0).is_err());
    }

    #[test]
    fn report_round_trips_through_csv() {
        let records = vec![record_with(2.0, 1), record_with(4.0, 1)];
        let stats = aggregate(&records).unwrap();
        let text = emit_report(std::slice::from_ref(&stats), ReportFormat::Csv);
        assert!(text.starts_with(REPORT_HEADER));
        assert_eq!(
            emit_report(std::slice::from_ref(&stats), ReportFormat::Csv),
            text
        );

        let rows = parse_report(&text).unwrap();
        assert_eq!(rows.len(), REPORT_METRICS.len());
        for ((metric, mean, stdev), row) in stats.metrics.iter().zip(&rows) {
            assert_eq!(row.metric, *metric);
            assert_eq!(row.mean, *mean, "mean must round-trip at full precision");
            assert_eq!(row.stdev, *stdev);
            assert_eq!(row.bytes_in, 100);
        }
    }

    #[test]
    fn markdown_report_has_table_shape() {
        let stats = aggregate(&[record_with(1.5, 1)]).unwrap();
        let text = emit_report(&[stats], ReportFormat::Markdown);
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("| qubits |"));
        assert!(lines[1].starts_with("|---"));
        assert_eq!(lines.len(), 2 + REPORT_METRICS.len());
    }

    #[test]
    fn parse_report_rejects_malformed_input() {
        assert!(parse_report("").is_err());
        assert!(parse_report("not,the,header\n").is_err());
        let bad_row = format!("{REPORT_HEADER}\n8,cuda,kernel,notafloat,0,1,1\n");
        assert!(matches!(
            parse_report(&bad_row),
            Err(HarnessError::ReportParse { line: 2, .. })
        ));
    }

    #[test]
    fn comments_are_ignored_when_parsing_reports() {
        let text =
            format!("# provenance note\n{REPORT_HEADER}\n8,cuda,kernel,1.96,0.027,332313,332313\n");
        let rows = parse_report(&text).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].mean, 1.96);
    }
}
