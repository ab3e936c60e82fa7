//! The Monte Carlo sweep engine: conflict-free update scheduling, local
//! energy deltas, Metropolis acceptance, and multi-sweep runs over one
//! layered system.
//!
//! A sweep examines every `(layer, site)` coordinate exactly once. The
//! schedule groups coordinates into phases such that no two coordinates in a
//! phase interact: sites sharing an intra-layer coupling get different greedy
//! colors, and the same site in adjacent layers is separated by layer parity.
//! Within a phase each coordinate belongs to one lane (`site mod lanes`), and
//! the owning lane draws exactly one uniform per coordinate from its own RNG
//! stream. That per-lane draw discipline is what lets serial and lane-parallel
//! execution consume identical streams.

use thiserror::Error;

use crate::model::{total_energy, LayeredSystem};
use crate::rng::{LaneRng, RngState};

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("schedule built for {expected_layers}x{expected_sites} with {expected_couplings} couplings does not match system {layers}x{sites} with {couplings}")]
    ShapeMismatch {
        expected_layers: usize,
        expected_sites: usize,
        expected_couplings: usize,
        layers: usize,
        sites: usize,
        couplings: usize,
    },
    #[error(transparent)]
    Rng(#[from] crate::rng::RngError),
}

/// A coordinate in a layered system.
pub type Coord = (u32, u32); // (layer, site)

/// Deterministic conflict-free update plan for one system shape.
#[derive(Debug, Clone)]
pub struct UpdateSchedule {
    layers: usize,
    sites: usize,
    coupling_count: usize,
    lanes: usize,
    colors: usize,
    /// phase -> lane -> coordinates in (layer, site) order.
    phases: Vec<Vec<Vec<Coord>>>,
    /// site -> (neighbor site, coupling index) pairs.
    adjacency: Vec<Vec<(u32, u32)>>,
}

impl UpdateSchedule {
    pub fn lanes(&self) -> usize {
        self.lanes
    }

    pub fn colors(&self) -> usize {
        self.colors
    }

    pub fn phase_count(&self) -> usize {
        self.phases.len()
    }

    pub fn phases(&self) -> &[Vec<Vec<Coord>>] {
        &self.phases
    }

    pub fn adjacency(&self) -> &[Vec<(u32, u32)>] {
        &self.adjacency
    }

    /// Lane that owns every coordinate of `site`.
    pub fn lane_of_site(&self, site: usize) -> usize {
        site % self.lanes
    }

    fn check_shape(&self, system: &LayeredSystem) -> Result<(), KernelError> {
        if self.layers != system.layers
            || self.sites != system.sites
            || self.coupling_count != system.intra_couplings.len()
        {
            return Err(KernelError::ShapeMismatch {
                expected_layers: self.layers,
                expected_sites: self.sites,
                expected_couplings: self.coupling_count,
                layers: system.layers,
                sites: system.sites,
                couplings: system.intra_couplings.len(),
            });
        }
        Ok(())
    }
}

/// Greedily colors the site interaction graph and lays the `colors x 2`
/// phases out as `(color, layer parity)` in lexicographic order. Sites go to
/// lanes round-robin by site index; coordinates within a `(phase, lane)` cell
/// are ordered by `(layer, site)` ascending.
pub fn color_sites(system: &LayeredSystem, lanes: usize) -> UpdateSchedule {
    assert!(lanes >= 1, "at least one lane required");
    let n = system.sites;

    let mut adjacency: Vec<Vec<(u32, u32)>> = vec![Vec::new(); n];
    for (idx, c) in system.intra_couplings.iter().enumerate() {
        adjacency[c.i].push((c.j as u32, idx as u32));
        adjacency[c.j].push((c.i as u32, idx as u32));
    }

    let mut color_of = vec![usize::MAX; n];
    let mut colors = 0;
    for site in 0..n {
        let mut used = vec![false; colors + 1];
        for &(neighbor, _) in &adjacency[site] {
            let c = color_of[neighbor as usize];
            if c < used.len() {
                used[c] = true;
            }
        }
        let color = used.iter().position(|taken| !taken).expect("free color");
        color_of[site] = color;
        colors = colors.max(color + 1);
    }

    let mut phases = vec![vec![Vec::new(); lanes]; colors * 2];
    for layer in 0..system.layers {
        let parity = layer % 2;
        for site in 0..n {
            let phase = color_of[site] * 2 + parity;
            phases[phase][site % lanes].push((layer as u32, site as u32));
        }
    }
    // Layer-major construction already orders each cell by (layer, site).

    UpdateSchedule {
        layers: system.layers,
        sites: n,
        coupling_count: system.intra_couplings.len(),
        lanes,
        colors,
        phases,
        adjacency,
    }
}

/// Energy change of flipping spin `(layer, site)`, computed from scratch.
///
/// `delta = 2 * s_i^k * (sum_j J_ij^eff s_j^k + h_i^eff
///          + J_perp * (s_i^(k-1 mod K) + s_i^(k+1 mod K)))`
///
/// For `K = 2` the two ring terms land on the same neighbor layer and count
/// twice, which keeps the delta consistent with the doubled ring bond in the
/// total energy.
pub fn flip_delta(system: &LayeredSystem, layer: usize, site: usize) -> f64 {
    let k_count = system.layers;
    let n = system.sites;
    let row = &system.spins[layer * n..(layer + 1) * n];
    let mut field = 0.0;
    for c in &system.intra_couplings {
        if c.i == site {
            field += c.value * f64::from(row[c.j]);
        } else if c.j == site {
            field += c.value * f64::from(row[c.i]);
        }
    }
    field += system.intra_fields[site];
    let down = system.spins[((layer + k_count - 1) % k_count) * n + site];
    let up = system.spins[((layer + 1) % k_count) * n + site];
    field += system.perp_coupling * (f64::from(down) + f64::from(up));
    2.0 * f64::from(row[site]) * field
}

/// Metropolis criterion: accept iff `delta <= 0` or `u < exp(-beta_unit *
/// delta)`. Effective couplings already absorb the inverse temperature, so
/// the sweep pipeline always passes `beta_unit = 1`.
pub fn accept(delta: f64, beta_unit: f64, u: f64) -> bool {
    delta <= 0.0 || u < (-beta_unit * delta).exp()
}

/// Outcome of one sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepStats {
    /// Coordinates examined; always `layers * sites`.
    pub examined: u64,
    /// Accepted flips.
    pub flipped: u64,
    /// Running total energy after the sweep, maintained incrementally.
    pub energy: f64,
}

/// Final state of a multi-sweep run; the spins live in the mutated system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointResult {
    pub sweeps: u64,
    pub flips: u64,
    pub energy: f64,
}

/// The delta computation shared by every sweep path.
///
/// Serial and parallel executions must apply the exact same floating-point
/// operation order so their accept decisions agree bitwise; both route
/// through here with their own spin reader.
#[inline]
pub(crate) fn scheduled_delta(
    system: &LayeredSystem,
    schedule: &UpdateSchedule,
    read_spin: impl Fn(usize) -> f64,
    layer: usize,
    site: usize,
) -> f64 {
    let k_count = system.layers;
    let n = system.sites;
    let mut field = 0.0;
    for &(neighbor, coupling) in &schedule.adjacency[site] {
        field += system.intra_couplings[coupling as usize].value
            * read_spin(layer * n + neighbor as usize);
    }
    field += system.intra_fields[site];
    let down = read_spin(((layer + k_count - 1) % k_count) * n + site);
    let up = read_spin(((layer + 1) % k_count) * n + site);
    field += system.perp_coupling * (down + up);
    2.0 * read_spin(layer * n + site) * field
}

/// One full sweep: phases in order, lanes within a phase in lane order, each
/// lane's coordinates in schedule order, one uniform drawn per coordinate
/// from RNG lane `(chain, owning lane)`. Accepted flips apply immediately.
///
/// `prior_energy` is the running energy before the sweep; the returned stats
/// carry it forward incrementally.
pub fn sweep(
    system: &mut LayeredSystem,
    schedule: &UpdateSchedule,
    rng: &mut RngState,
    chain: usize,
    prior_energy: f64,
) -> Result<SweepStats, KernelError> {
    schedule.check_shape(system)?;
    let n = system.sites;
    let mut flipped = 0u64;
    let mut energy = prior_energy;
    for phase in &schedule.phases {
        for (lane, coords) in phase.iter().enumerate() {
            for &(layer, site) in coords {
                let (layer, site) = (layer as usize, site as usize);
                let delta = scheduled_delta(
                    system,
                    schedule,
                    |idx| f64::from(system.spins[idx]),
                    layer,
                    site,
                );
                let u = rng.next_unit(chain, lane)?;
                if accept(delta, 1.0, u) {
                    system.spins[layer * n + site] = -system.spins[layer * n + site];
                    flipped += 1;
                    energy += delta;
                }
            }
        }
    }
    Ok(SweepStats {
        examined: (system.layers * system.sites) as u64,
        flipped,
        energy,
    })
}

/// Runs `sweeps` consecutive sweeps, seeding the incremental energy with a
/// full recomputation. `sweeps = 0` leaves the spins untouched.
pub fn run_point(
    system: &mut LayeredSystem,
    sweeps: u64,
    schedule: &UpdateSchedule,
    rng: &mut RngState,
    chain: usize,
) -> Result<PointResult, KernelError> {
    schedule.check_shape(system)?;
    let mut energy = total_energy(system);
    let mut flips = 0u64;
    for _ in 0..sweeps {
        let stats = sweep(system, schedule, rng, chain, energy)?;
        energy = stats.energy;
        flips += stats.flipped;
    }
    Ok(PointResult {
        sweeps,
        flips,
        energy,
    })
}

/// Lane worker body shared by the parallel backend: processes the given
/// lane's coordinates of one phase against a shared spin buffer, drawing from
/// the lane's own generator. Returns `(flips, energy_delta)`.
///
/// The spin reader/writer indirection is over atomics on the parallel path;
/// decisions are bitwise identical to [`sweep`] because the delta arithmetic
/// and the per-lane draw order are identical.
#[inline]
pub(crate) fn lane_phase(
    system: &LayeredSystem,
    schedule: &UpdateSchedule,
    coords: &[Coord],
    lane_rng: &mut LaneRng,
    read_spin: &impl Fn(usize) -> f64,
    flip_spin: &impl Fn(usize),
) -> (u64, f64) {
    let n = system.sites;
    let mut flips = 0u64;
    let mut energy_delta = 0.0;
    for &(layer, site) in coords {
        let (layer, site) = (layer as usize, site as usize);
        let delta = scheduled_delta(system, schedule, read_spin, layer, site);
        let u = lane_rng.next_unit();
        if accept(delta, 1.0, u) {
            flip_spin(layer * n + site);
            flips += 1;
            energy_delta += delta;
        }
    }
    (flips, energy_delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Coupling;
    use crate::verify::random_small_system;

    fn rng_for(chains: usize, threads: usize) -> RngState {
        let mut rng = RngState::alloc(chains, threads).unwrap();
        rng.init(31);
        rng
    }

    fn free_system(layers: usize, sites: usize) -> LayeredSystem {
        LayeredSystem {
            layers,
            sites,
            spins: vec![1; layers * sites],
            intra_couplings: vec![],
            intra_fields: vec![0.0; sites],
            perp_coupling: 0.0,
        }
    }

    fn triangle_system() -> LayeredSystem {
        LayeredSystem {
            layers: 4,
            sites: 3,
            spins: vec![1; 12],
            intra_couplings: vec![
                Coupling {
                    i: 0,
                    j: 1,
                    value: 1.0,
                },
                Coupling {
                    i: 0,
                    j: 2,
                    value: 1.0,
                },
                Coupling {
                    i: 1,
                    j: 2,
                    value: 1.0,
                },
            ],
            intra_fields: vec![0.0; 3],
            perp_coupling: 0.3,
        }
    }

    #[test]
    fn uncoupled_system_needs_two_phases() {
        let system = free_system(2, 3);
        let schedule = color_sites(&system, 2);
        assert_eq!(schedule.colors(), 1);
        assert_eq!(schedule.phase_count(), 2);
    }

    #[test]
    fn triangle_needs_three_colors_and_six_phases() {
        let schedule = color_sites(&triangle_system(), 2);
        assert_eq!(schedule.colors(), 3);
        assert_eq!(schedule.phase_count(), 6);
    }

    #[test]
    fn phases_partition_all_coordinates() {
        for seed in 0..20u64 {
            let system = random_small_system(seed);
            let schedule = color_sites(&system, 3);
            let mut seen = vec![false; system.layers * system.sites];
            for phase in schedule.phases() {
                for coords in phase {
                    for &(layer, site) in coords {
                        let idx = layer as usize * system.sites + site as usize;
                        assert!(!seen[idx], "coordinate visited twice");
                        seen[idx] = true;
                    }
                }
            }
            assert!(seen.into_iter().all(|v| v), "coordinate missed");
        }
    }

    #[test]
    fn phase_members_do_not_interact_for_even_layer_counts() {
        for seed in 0..20u64 {
            let mut system = random_small_system(seed);
            if system.layers % 2 == 1 {
                system.layers += 1;
                let extended = system.spins.len() + system.sites;
                system.spins.resize(extended, 1);
            }
            let schedule = color_sites(&system, 2);
            for phase in schedule.phases() {
                let coords: Vec<_> = phase.iter().flatten().copied().collect();
                for (a, &(ka, ia)) in coords.iter().enumerate() {
                    for &(kb, ib) in &coords[a + 1..] {
                        let coupled = system.intra_couplings.iter().any(|c| {
                            ka == kb
                                && ((c.i == ia as usize && c.j == ib as usize)
                                    || (c.i == ib as usize && c.j == ia as usize))
                        });
                        assert!(!coupled, "intra-layer conflict in one phase");
                        if ia == ib {
                            let ring_gap = (ka as i64 - kb as i64)
                                .rem_euclid(system.layers as i64)
                                .min((kb as i64 - ka as i64).rem_euclid(system.layers as i64));
                            assert_ne!(ring_gap, 1, "adjacent-layer conflict in one phase");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn lane_assignment_is_round_robin() {
        let system = free_system(2, 5);
        let schedule = color_sites(&system, 2);
        for phase in schedule.phases() {
            for (lane, coords) in phase.iter().enumerate() {
                assert!(coords.iter().all(|&(_, site)| site as usize % 2 == lane));
            }
        }
    }

    #[test]
    fn isolated_spin_has_zero_delta() {
        let system = free_system(2, 1);
        assert_eq!(flip_delta(&system, 0, 0), 0.0);
    }

    #[test]
    fn two_layer_ring_delta_matches_brute_force() {
        let mut system = LayeredSystem {
            layers: 2,
            sites: 1,
            spins: vec![1, 1],
            intra_couplings: vec![],
            intra_fields: vec![0.0],
            perp_coupling: 1.0,
        };
        let delta = flip_delta(&system, 0, 0);
        let before = total_energy(&system);
        system.spins[0] = -1;
        let after = total_energy(&system);
        assert_eq!(delta, after - before);
        assert_eq!(delta, 4.0);
    }

    #[test]
    fn delta_agrees_with_recomputation_on_random_systems() {
        let mut checked = 0;
        for seed in 0..100u64 {
            let mut system = random_small_system(seed);
            for layer in 0..system.layers {
                for site in 0..system.sites {
                    let delta = flip_delta(&system, layer, site);
                    let before = total_energy(&system);
                    let idx = layer * system.sites + site;
                    system.spins[idx] = -system.spins[idx];
                    let diff = total_energy(&system) - before;
                    system.spins[idx] = -system.spins[idx];
                    assert!(
                        (delta - diff).abs() <= 1e-9,
                        "seed {seed} ({layer},{site}): {delta} vs {diff}"
                    );
                    checked += 1;
                }
            }
        }
        assert!(checked > 500);
    }

    #[test]
    fn accept_follows_metropolis_rule() {
        assert!(accept(0.0, 1.0, 0.999_999));
        assert!(accept(-5.0, 1.0, 0.999_999));
        assert!(!accept(2.0, 1.0, 0.5)); // exp(-2) ~ 0.1353 < 0.5
        assert!(accept(2.0, 1.0, 0.1));
    }

    #[test]
    fn zero_coupling_sweep_flips_everything() {
        let mut system = free_system(4, 3);
        let schedule = color_sites(&system, 2);
        let mut rng = rng_for(1, 2);
        let stats = sweep(&mut system, &schedule, &mut rng, 0, 0.0).unwrap();
        assert_eq!(stats.examined, 12);
        assert_eq!(stats.flipped, 12);
        assert!(system.spins.iter().all(|s| *s == -1));
    }

    #[test]
    fn sweep_is_deterministic_from_equal_state() {
        let system = random_small_system(5);
        let schedule = color_sites(&system, 2);
        let mut runs = Vec::new();
        for _ in 0..2 {
            let mut sys = system.clone();
            let mut rng = rng_for(1, 2);
            let stats = sweep(&mut sys, &schedule, &mut rng, 0, total_energy(&system)).unwrap();
            runs.push((sys.spins, stats));
        }
        assert_eq!(runs[0], runs[1]);
    }

    #[test]
    fn incremental_energy_tracks_recomputation() {
        for seed in [3u64, 11, 19] {
            let mut system = random_small_system(seed);
            let schedule = color_sites(&system, 3);
            let mut rng = rng_for(1, 3);
            let mut energy = total_energy(&system);
            for _ in 0..50 {
                let stats = sweep(&mut system, &schedule, &mut rng, 0, energy).unwrap();
                energy = stats.energy;
                assert!(
                    (energy - total_energy(&system)).abs() <= 1e-9,
                    "incremental energy drifted (seed {seed})"
                );
            }
        }
    }

    #[test]
    fn preset_sized_system_examines_1024_per_sweep() {
        use crate::model::{build_schedule, trotterize, ProblemInstance};
        let inst = ProblemInstance::generate(8, 2, 1.0).unwrap();
        let sched = build_schedule(27, 1.0, 1.0).unwrap();
        let mut rng = rng_for(1, 4);
        let mut system = trotterize(&inst, &sched.points()[13], 128, &mut rng, 0, 0).unwrap();
        let schedule = color_sites(&system, 4);
        let energy = total_energy(&system);
        let stats = sweep(&mut system, &schedule, &mut rng, 0, energy).unwrap();
        assert_eq!(stats.examined, 1024);
    }

    #[test]
    fn zero_sweeps_is_identity() {
        let mut system = random_small_system(8);
        let spins_before = system.spins.clone();
        let schedule = color_sites(&system, 2);
        let mut rng = rng_for(1, 2);
        let result = run_point(&mut system, 0, &schedule, &mut rng, 0).unwrap();
        assert_eq!(system.spins, spins_before);
        assert_eq!(result.flips, 0);
        assert_eq!(result.energy, total_energy(&system));
    }

    #[test]
    fn run_point_flips_are_additive_over_sweeps() {
        let base = random_small_system(21);
        let schedule = color_sites(&base, 2);

        let mut whole = base.clone();
        let mut rng = rng_for(1, 2);
        let combined = run_point(&mut whole, 6, &schedule, &mut rng, 0).unwrap();

        let mut stepped = base.clone();
        let mut rng = rng_for(1, 2);
        let mut energy = total_energy(&stepped);
        let mut flips = 0;
        for _ in 0..6 {
            let stats = sweep(&mut stepped, &schedule, &mut rng, 0, energy).unwrap();
            energy = stats.energy;
            flips += stats.flipped;
        }
        assert_eq!(combined.flips, flips);
        assert_eq!(whole.spins, stepped.spins);
        assert_eq!(combined.energy, energy);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let system_a = free_system(2, 3);
        let mut system_b = free_system(4, 3);
        let schedule = color_sites(&system_a, 2);
        let mut rng = rng_for(1, 2);
        assert!(matches!(
            sweep(&mut system_b, &schedule, &mut rng, 0, 0.0),
            Err(KernelError::ShapeMismatch { .. })
        ));
    }
}
