//! Built-in verification suites with independent oracles.
//!
//! Everything here deliberately avoids the code paths it checks: the
//! Mersenne-Twister oracle is a standalone textbook implementation, energies
//! are recomputed with their own loops, and the statically-indexed state
//! initialization mirrors a three-dimensional array layout rather than the
//! flat one the production generator uses. `sqabench verify` and the
//! acceptance test suite both run through these functions.

use std::path::Path;

use crate::backend::{execute, plan, transfer_in, BackendKind};
use crate::harness::{
    aggregate, emit_report, parse_report, ratio, relative_difference, run_benchmark, BenchConfig,
    PhaseRecord, ReportFormat, ReportRow,
};
use crate::kernel::{color_sites, flip_delta, sweep};
use crate::model::{
    build_schedule, preset_points, trotterize, variable_count, Coupling, LayeredSystem,
    ProblemInstance,
};
use crate::rng::{RngState, STATE_WORDS};

/// Standalone textbook MT19937, kept independent of [`crate::rng`].
pub struct ReferenceMt19937 {
    state: Vec<u32>,
    cursor: usize,
}

impl ReferenceMt19937 {
    pub fn new(seed: u32) -> Self {
        let mut state = vec![0u32; 624];
        state[0] = seed;
        for i in 1..624 {
            let prev = state[i - 1];
            state[i] = 1_812_433_253u32
                .wrapping_mul(prev ^ (prev >> 30))
                .wrapping_add(i as u32);
        }
        Self { state, cursor: 624 }
    }

    pub fn state_words(&self) -> &[u32] {
        &self.state
    }

    pub fn next_u32(&mut self) -> u32 {
        if self.cursor >= 624 {
            // Two-pass block generation, as in the classical listing.
            for i in 0..227 {
                let y = (self.state[i] & 0x8000_0000) | (self.state[i + 1] & 0x7fff_ffff);
                self.state[i] =
                    self.state[i + 397] ^ (y >> 1) ^ if y & 1 == 1 { 0x9908_b0df } else { 0 };
            }
            for i in 227..623 {
                let y = (self.state[i] & 0x8000_0000) | (self.state[i + 1] & 0x7fff_ffff);
                self.state[i] =
                    self.state[i - 227] ^ (y >> 1) ^ if y & 1 == 1 { 0x9908_b0df } else { 0 };
            }
            let y = (self.state[623] & 0x8000_0000) | (self.state[0] & 0x7fff_ffff);
            self.state[623] = self.state[396] ^ (y >> 1) ^ if y & 1 == 1 { 0x9908_b0df } else { 0 };
            self.cursor = 0;
        }
        let mut y = self.state[self.cursor];
        self.cursor += 1;
        y ^= y >> 11;
        y ^= (y << 7) & 0x9d2c_5680;
        y ^= (y << 15) & 0xefc6_0000;
        y ^= y >> 18;
        y
    }
}

struct MixStream(u64);

impl MixStream {
    fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// Deterministic small layered system for oracle sampling: up to 4 sites and
/// 4 layers, moderate couplings.
pub fn random_small_system(seed: u64) -> LayeredSystem {
    let mut stream = MixStream(seed.wrapping_mul(0x5851_f42d_4c95_7f2d).wrapping_add(1));
    let sites = 1 + (stream.next_u64() % 4) as usize;
    let layers = 2 + (stream.next_u64() % 3) as usize;
    let mut intra_couplings = Vec::new();
    for i in 0..sites {
        for j in (i + 1)..sites {
            if stream.unit() < 0.6 {
                intra_couplings.push(Coupling {
                    i,
                    j,
                    value: 1.5 * stream.unit() - 0.75,
                });
            }
        }
    }
    let intra_fields = (0..sites).map(|_| stream.unit() - 0.5).collect();
    let perp_coupling = 0.05 + 0.55 * stream.unit();
    let spins = (0..layers * sites)
        .map(|_| if stream.unit() < 0.5 { 1 } else { -1 })
        .collect();
    LayeredSystem {
        layers,
        sites,
        spins,
        intra_couplings,
        intra_fields,
        perp_coupling,
    }
}

/// Recomputes the energy with its own loop structure: undirected intra-layer
/// bonds, per-variable fields, then one pass over the ring bonds.
pub fn brute_force_energy(system: &LayeredSystem) -> f64 {
    let n = system.sites;
    let k_count = system.layers;
    let spin = |k: usize, i: usize| f64::from(system.spins[k * n + i]);
    let mut e = 0.0;
    for c in &system.intra_couplings {
        for k in 0..k_count {
            e -= c.value * spin(k, c.i) * spin(k, c.j);
        }
    }
    for i in 0..n {
        for k in 0..k_count {
            e -= system.intra_fields[i] * spin(k, i);
        }
    }
    for k in 0..k_count {
        let next = (k + 1) % k_count;
        for i in 0..n {
            e -= system.perp_coupling * spin(k, i) * spin(next, i);
        }
    }
    e
}

/// The verification suites, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Size,
    Rng,
    Layout,
    Backend,
    Boltzmann,
    Delta,
    Fixtures,
    Accounting,
    Determinism,
}

impl Suite {
    pub const ALL: [Suite; 9] = [
        Suite::Size,
        Suite::Rng,
        Suite::Layout,
        Suite::Backend,
        Suite::Boltzmann,
        Suite::Delta,
        Suite::Fixtures,
        Suite::Accounting,
        Suite::Determinism,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Size => "size",
            Suite::Rng => "rng",
            Suite::Layout => "layout",
            Suite::Backend => "backend",
            Suite::Boltzmann => "boltzmann",
            Suite::Delta => "delta",
            Suite::Fixtures => "fixtures",
            Suite::Accounting => "accounting",
            Suite::Determinism => "determinism",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .iter()
            .copied()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| format!("unknown suite `{s}`"))
    }
}

/// Runs one suite; `fixtures_dir` is only read by [`Suite::Fixtures`].
pub fn run_suite(suite: Suite, fixtures_dir: &Path) -> Result<(), String> {
    match suite {
        Suite::Size => check_size_arithmetic(),
        Suite::Rng => check_rng_conformance(),
        Suite::Layout => check_layout_equivalence(),
        Suite::Backend => check_backend_equivalence(),
        Suite::Boltzmann => check_boltzmann(),
        Suite::Delta => check_delta_oracle(),
        Suite::Fixtures => check_fixture_stats(fixtures_dir),
        Suite::Accounting => check_accounting(),
        Suite::Determinism => check_determinism(),
    }
}

/// All seven built-in problem sizes multiply out exactly.
pub fn check_size_arithmetic() -> Result<(), String> {
    let expected: [(u64, u64, u64); 7] = [
        (8, 27, 27_648),
        (16, 34, 69_632),
        (32, 37, 151_552),
        (48, 57, 350_208),
        (72, 71, 654_336),
        (96, 111, 1_363_968),
        (128, 129, 2_113_536),
    ];
    for (qubits, points, total) in expected {
        let preset =
            preset_points(qubits).ok_or_else(|| format!("missing preset for {qubits} qubits"))?;
        if preset != points {
            return Err(format!(
                "preset for {qubits} qubits is {preset}, expected {points}"
            ));
        }
        let counted = variable_count(qubits, 128, points).map_err(|e| e.to_string())?;
        if counted != total {
            return Err(format!(
                "{qubits} qubits: counted {counted}, expected {total}"
            ));
        }
    }
    Ok(())
}

/// Single-lane pipeline is word-for-word MT19937 for 10,000 outputs.
pub fn check_rng_conformance() -> Result<(), String> {
    for seed in [1u32, 42, 5489] {
        let mut state = RngState::alloc(1, 1).map_err(|e| e.to_string())?;
        state.init(seed);
        let mut oracle = ReferenceMt19937::new(seed);
        for draw in 0..10_000 {
            let got = state.next_u32(0, 0).map_err(|e| e.to_string())?;
            let want = oracle.next_u32();
            if got != want {
                return Err(format!(
                    "seed {seed}, draw {draw}: got {got}, oracle says {want}"
                ));
            }
        }
    }
    Ok(())
}

/// Statically-indexed 3-D initialization, flattened, must equal the flat
/// production initialization for every tested geometry.
// The index-heavy loops deliberately mirror the 3-D array formulation.
#[allow(clippy::needless_range_loop)]
pub fn check_layout_equivalence() -> Result<(), String> {
    for chains in [1usize, 2, 3] {
        for threads in [1usize, 2, 32] {
            let seed = 20_000 + (chains * 100 + threads) as u32;

            // 3-D formulation: mt[chain][word][thread].
            let mut cube = vec![vec![vec![0u32; threads]; STATE_WORDS]; chains];
            for (chain, chain_block) in cube.iter_mut().enumerate() {
                for thread in 0..threads {
                    chain_block[0][thread] =
                        seed.wrapping_add((chain * threads * STATE_WORDS + thread) as u32);
                    let mut counter = 1usize;
                    while counter < STATE_WORDS {
                        let prev = chain_block[counter - 1][thread];
                        chain_block[counter][thread] = 1_812_433_253u32
                            .wrapping_mul(prev ^ (prev >> 30))
                            .wrapping_add(counter as u32);
                        counter += 1;
                    }
                }
            }
            let flattened: Vec<u32> = cube
                .into_iter()
                .flat_map(|chain_block| chain_block.into_iter().flatten())
                .collect();

            let mut state = RngState::alloc(chains, threads).map_err(|e| e.to_string())?;
            state.init(seed);
            if state.words() != flattened.as_slice() {
                return Err(format!(
                    "flat and 3-D initializations diverge for {chains} chains x {threads} threads"
                ));
            }
        }
    }
    Ok(())
}

struct BackendRun {
    data: Vec<u8>,
    flips: Vec<u64>,
}

fn equivalence_buffers(seed: u32) -> Result<(BackendRun, BackendRun), String> {
    let qubits = 8;
    let layers = 16;
    let points = 4;
    let sweeps = 100;
    let lanes = 4;

    let instance =
        ProblemInstance::generate(qubits, u64::from(seed), 0.6).map_err(|e| e.to_string())?;
    let anneal = build_schedule(points, 1.0, 1.0).map_err(|e| e.to_string())?;
    let mut rng = RngState::alloc(points, lanes).map_err(|e| e.to_string())?;
    rng.init(seed);
    let mut systems = Vec::new();
    for point in anneal.points() {
        systems.push(
            trotterize(&instance, point, layers, &mut rng, point.index, 0)
                .map_err(|e| e.to_string())?,
        );
    }
    let staged = transfer_in(&systems).map_err(|e| e.to_string())?;

    let mut rng_ref = rng.clone();
    let mut rng_par = rng;
    let reference = execute(
        &plan(points, lanes, BackendKind::Reference),
        &staged,
        sweeps,
        &mut rng_ref,
    )
    .map_err(|e| e.to_string())?;
    let parallel = execute(
        &plan(points, lanes, BackendKind::Parallel),
        &staged,
        sweeps,
        &mut rng_par,
    )
    .map_err(|e| e.to_string())?;

    if rng_ref != rng_par {
        return Err(format!("seed {seed}: backends left diverged rng states"));
    }
    Ok((
        BackendRun {
            data: reference.buffers.data().to_vec(),
            flips: reference.points.iter().map(|p| p.flips).collect(),
        },
        BackendRun {
            data: parallel.buffers.data().to_vec(),
            flips: parallel.points.iter().map(|p| p.flips).collect(),
        },
    ))
}

/// Reference and parallel backends are bitwise identical over 20 seeds.
pub fn check_backend_equivalence() -> Result<(), String> {
    for seed in 1..=20u32 {
        let (reference, parallel) = equivalence_buffers(seed)?;
        if reference.data != parallel.data {
            return Err(format!("seed {seed}: final spin buffers differ"));
        }
        if reference.flips != parallel.flips {
            return Err(format!(
                "seed {seed}: flip counts differ ({:?} vs {:?})",
                reference.flips, parallel.flips
            ));
        }
    }
    Ok(())
}

/// Long-run state frequencies of a 2x4 system match the exact Boltzmann
/// distribution within total-variation distance 0.01, and the mean energy
/// lands within three batch-means standard errors.
pub fn check_boltzmann() -> Result<(), String> {
    let mut system = LayeredSystem {
        layers: 4,
        sites: 2,
        spins: vec![1; 8],
        intra_couplings: vec![Coupling {
            i: 0,
            j: 1,
            value: 0.25,
        }],
        intra_fields: vec![0.1, -0.05],
        perp_coupling: 0.2,
    };

    let state_count = 1usize << 8;
    let mut exact_weights = vec![0.0f64; state_count];
    let mut probe = system.clone();
    for (state, weight) in exact_weights.iter_mut().enumerate() {
        for bit in 0..8 {
            probe.spins[bit] = if state & (1 << bit) != 0 { 1 } else { -1 };
        }
        *weight = (-brute_force_energy(&probe)).exp();
    }
    let z: f64 = exact_weights.iter().sum();
    let exact: Vec<f64> = exact_weights.iter().map(|w| w / z).collect();
    let exact_mean_energy: f64 = (0..state_count)
        .map(|state| {
            for bit in 0..8 {
                probe.spins[bit] = if state & (1 << bit) != 0 { 1 } else { -1 };
            }
            exact[state] * brute_force_energy(&probe)
        })
        .sum();

    let schedule = color_sites(&system, 2);
    let mut rng = RngState::alloc(1, 2).map_err(|e| e.to_string())?;
    rng.init(90_210);

    let mut energy = brute_force_energy(&system);
    for _ in 0..20_000 {
        energy = sweep(&mut system, &schedule, &mut rng, 0, energy)
            .map_err(|e| e.to_string())?
            .energy;
    }

    let samples = 1_000_000usize;
    let batch = 1_000usize;
    let mut histogram = vec![0u64; state_count];
    let mut batch_means = Vec::with_capacity(samples / batch);
    let mut batch_sum = 0.0;
    let mut energy_sum = 0.0;
    for sweep_idx in 0..samples {
        energy = sweep(&mut system, &schedule, &mut rng, 0, energy)
            .map_err(|e| e.to_string())?
            .energy;
        let mut state = 0usize;
        for bit in 0..8 {
            if system.spins[bit] > 0 {
                state |= 1 << bit;
            }
        }
        histogram[state] += 1;
        energy_sum += energy;
        batch_sum += energy;
        if (sweep_idx + 1) % batch == 0 {
            batch_means.push(batch_sum / batch as f64);
            batch_sum = 0.0;
        }
    }

    let tv: f64 = 0.5
        * histogram
            .iter()
            .zip(&exact)
            .map(|(count, p)| (*count as f64 / samples as f64 - p).abs())
            .sum::<f64>();
    if tv > 0.01 {
        return Err(format!("total-variation distance {tv:.4} exceeds 0.01"));
    }

    let empirical_mean = energy_sum / samples as f64;
    let b = batch_means.len() as f64;
    let batch_mean: f64 = batch_means.iter().sum::<f64>() / b;
    let batch_var: f64 = batch_means
        .iter()
        .map(|m| (m - batch_mean) * (m - batch_mean))
        .sum::<f64>()
        / (b - 1.0);
    let standard_error = (batch_var / b).sqrt();
    let deviation = (empirical_mean - exact_mean_energy).abs();
    if deviation > 3.0 * standard_error {
        return Err(format!(
            "mean energy off by {deviation:.5}, more than 3 x SE = {:.5}",
            3.0 * standard_error
        ));
    }
    Ok(())
}

/// `flip_delta` agrees with a brute-force energy difference on 1,000 random
/// small systems to 1e-9.
pub fn check_delta_oracle() -> Result<(), String> {
    for seed in 0..1_000u64 {
        let mut system = random_small_system(seed);
        let mut stream = MixStream(seed ^ 0xabcd_ef01);
        let layer = (stream.next_u64() % system.layers as u64) as usize;
        let site = (stream.next_u64() % system.sites as u64) as usize;

        let delta = flip_delta(&system, layer, site);
        let before = brute_force_energy(&system);
        let idx = layer * system.sites + site;
        system.spins[idx] = -system.spins[idx];
        let after = brute_force_energy(&system);
        let diff = after - before;
        if (delta - diff).abs() > 1e-9 {
            return Err(format!(
                "seed {seed} coordinate ({layer},{site}): delta {delta} vs recomputed {diff}"
            ));
        }
    }
    Ok(())
}

fn load_fixture(path: &Path) -> Result<Vec<ReportRow>, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read fixture {}: {e}", path.display()))?;
    parse_report(&text).map_err(|e| format!("fixture {}: {e}", path.display()))
}

fn fixture_metric(rows: &[ReportRow], qubits: u64, metric: &str) -> Result<f64, String> {
    rows.iter()
        .find(|r| r.qubits == qubits && r.metric == metric)
        .map(|r| r.mean)
        .ok_or_else(|| format!("fixture misses metric {metric} for {qubits} qubits"))
}

const FIXTURE_SIZES: [u64; 7] = [8, 16, 32, 48, 72, 96, 128];

/// The published timing dataset reproduces the documented comparative spans.
pub fn check_fixture_stats(fixtures_dir: &Path) -> Result<(), String> {
    let cuda = load_fixture(&fixtures_dir.join("reference_times_cuda.csv"))?;
    let opencl = load_fixture(&fixtures_dir.join("reference_times_opencl.csv"))?;

    let spans = |metric: &str| -> Result<(f64, f64), String> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for qubits in FIXTURE_SIZES {
            let base = fixture_metric(&cuda, qubits, metric)?;
            let other = fixture_metric(&opencl, qubits, metric)?;
            let rd = relative_difference(base, other).map_err(|e| e.to_string())?;
            min = min.min(rd);
            max = max.max(rd);
        }
        Ok((min, max))
    };

    let (kernel_min, kernel_max) = spans("kernel")?;
    if (kernel_min - 0.127).abs() > 0.005 || (kernel_max - 0.626).abs() > 0.005 {
        return Err(format!(
            "kernel slowdown span [{kernel_min:.4}, {kernel_max:.4}] outside [0.127, 0.626] +/- 0.005"
        ));
    }
    let (e2e_min, e2e_max) = spans("end_to_end")?;
    if (e2e_min - 0.157).abs() > 0.005 || (e2e_max - 0.674).abs() > 0.005 {
        return Err(format!(
            "end-to-end slowdown span [{e2e_min:.4}, {e2e_max:.4}] outside [0.157, 0.674] +/- 0.005"
        ));
    }

    let mut ratio_min = f64::INFINITY;
    let mut ratio_max = f64::NEG_INFINITY;
    for qubits in FIXTURE_SIZES {
        let base = fixture_metric(&cuda, qubits, "transfer")?;
        let other = fixture_metric(&opencl, qubits, "transfer")?;
        let r = ratio(other, base).map_err(|e| e.to_string())?;
        if !(1.21..=1.57).contains(&r) {
            return Err(format!(
                "transfer ratio {r:.4} for {qubits} qubits outside [1.22, 1.56] +/- 0.01"
            ));
        }
        ratio_min = ratio_min.min(r);
        ratio_max = ratio_max.max(r);
    }
    // The transfer overhead stays flat across sizes: max/min ratio <= 1.3.
    if ratio_max / ratio_min > 1.3 {
        return Err(format!(
            "transfer ratios vary too much: {ratio_max:.4} / {ratio_min:.4} > 1.3"
        ));
    }

    // gpu_ops mirrors kernel + transfer to published rounding.
    for rows in [&cuda, &opencl] {
        for qubits in FIXTURE_SIZES {
            let gpu_ops = fixture_metric(rows, qubits, "gpu_ops")?;
            let parts =
                fixture_metric(rows, qubits, "kernel")? + fixture_metric(rows, qubits, "transfer")?;
            if (gpu_ops - parts).abs() > 0.05 {
                return Err(format!(
                    "{qubits} qubits: gpu_ops {gpu_ops} vs kernel+transfer {parts}"
                ));
            }
        }
    }
    Ok(())
}

fn determinism_config(backend: BackendKind) -> BenchConfig {
    BenchConfig {
        qubits: 8,
        layers: 32,
        points: 4,
        sweeps: 500,
        lanes_per_group: 4,
        backend,
        seed: 77,
        instance: None,
    }
}

fn live_records(config: &BenchConfig, reps: usize) -> Result<Vec<PhaseRecord>, String> {
    (0..reps)
        .map(|_| run_benchmark(config).map_err(|e| e.to_string()))
        .collect()
}

/// Live phase records satisfy the accounting identities exactly.
pub fn check_accounting() -> Result<(), String> {
    for backend in [BackendKind::Reference, BackendKind::Parallel] {
        let config = determinism_config(backend);
        for record in live_records(&config, 2)? {
            let explicit = record.copy_in_s + record.kernel_s + record.copy_out_s;
            if record.gpu_ops_s() != explicit {
                return Err(format!(
                    "gpu_ops {} != t3+t4+t5 {explicit}",
                    record.gpu_ops_s()
                ));
            }
            if record.end_to_end_s() < record.gpu_ops_s() || record.gpu_ops_s() < record.kernel_s {
                return Err("phase ordering identity violated".into());
            }
            if record.bytes_in != record.bytes_out {
                return Err(format!(
                    "transfer asymmetry: {} in vs {} out",
                    record.bytes_in, record.bytes_out
                ));
            }
        }
    }
    Ok(())
}

/// Two full benchmark invocations with one config produce identical
/// non-timing report columns.
pub fn check_determinism() -> Result<(), String> {
    let config = determinism_config(BackendKind::Parallel);
    let mut reports = Vec::new();
    for _ in 0..2 {
        let records = live_records(&config, 3)?;
        let stats = aggregate(&records).map_err(|e| e.to_string())?;
        reports.push(emit_report(&[stats], ReportFormat::Csv));
    }
    let first = parse_report(&reports[0]).map_err(|e| e.to_string())?;
    let second = parse_report(&reports[1]).map_err(|e| e.to_string())?;
    if first.len() != second.len() {
        return Err("report row counts differ between invocations".into());
    }
    for (a, b) in first.iter().zip(&second) {
        let key_equal = a.qubits == b.qubits && a.backend == b.backend && a.metric == b.metric;
        if !key_equal {
            return Err(format!("row keys diverge: {a:?} vs {b:?}"));
        }
        if a.bytes_in != b.bytes_in || a.bytes_out != b.bytes_out {
            return Err(format!("byte columns diverge for metric {}", a.metric));
        }
        let non_timing = matches!(a.metric.as_str(), "flips" | "spin_digest");
        if non_timing && (a.mean != b.mean || a.stdev != b.stdev) {
            return Err(format!(
                "non-timing metric {} diverges: {} vs {}",
                a.metric, a.mean, b.mean
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::total_energy;

    #[test]
    fn reference_oracle_produces_known_first_output() {
        let mut oracle = ReferenceMt19937::new(5489);
        assert_eq!(oracle.next_u32(), 3_499_211_612);
    }

    #[test]
    fn brute_force_energy_agrees_with_model_energy() {
        for seed in 0..50u64 {
            let system = random_small_system(seed);
            let a = brute_force_energy(&system);
            let b = total_energy(&system);
            assert!((a - b).abs() < 1e-9, "seed {seed}: {a} vs {b}");
        }
    }

    #[test]
    fn suites_parse_by_name() {
        for suite in Suite::ALL {
            assert_eq!(suite.name().parse::<Suite>().unwrap(), suite);
        }
        assert!("bogus".parse::<Suite>().is_err());
    }
}
